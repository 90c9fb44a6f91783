#pragma once

#include <random>
#include <string>

#include "dss.hpp"

namespace lyv5 {

inline constexpr std::size_t kGamKernel = 7;

template <std::floating_point T>
struct GamParams {
    std::size_t channels = 0, reduction = 1;
    nn::ActKind act;
    nn::Linear<T> mlp_in, mlp_out;   // channel gate, C -> C/r -> C
    nn::Conv<T> squeeze, excite;     // spatial gate, C -> C/r (BN, act) -> C

    GamParams(std::size_t c, std::size_t r, nn::ActKind activation, std::mt19937_64& rng)
        : channels(c), reduction(r), act(activation), mlp_in(c, c / r, true, rng), mlp_out(c / r, c, true, rng),
          squeeze(nn::ConvSpec::block(c, c / r, kGamKernel, 1, activation), rng),
          excite(excite_spec(c, r), rng)
    {
        if (r == 0 || c % r) throw ShapeError("GAM: reduction " + std::to_string(r) + " does not divide " + std::to_string(c));
    }

    static nn::ConvSpec excite_spec(std::size_t c, std::size_t r)
    {
        nn::ConvSpec s;
        s.in_channels = c / r;
        s.out_channels = c;
        s.kernel = kGamKernel;
        s.padding = kGamKernel / 2;
        return s;
    }

    void collect(const std::string& prefix, nn::TensorList<T>& out)
    {
        mlp_in.collect(nn::join_name(prefix, "channel.fc1"), out);
        mlp_out.collect(nn::join_name(prefix, "channel.fc2"), out);
        squeeze.collect(nn::join_name(prefix, "spatial.cv1"), out);
        excite.collect(nn::join_name(prefix, "spatial.cv2"), out);
    }

    nn::LayerCost cost(const Shape& in) const
    {
        const std::uint64_t positions = in[0] * in[2] * in[3];
        nn::LayerCost c = mlp_in.cost(positions) + mlp_out.cost(positions);
        c += squeeze.cost(in) + excite.cost(squeeze.out_shape(in));
        c.activations = numel(in);
        return c;
    }
};

// M_c: per-position MLP across channels, evaluated channel-last.
template <std::floating_point T>
Var<T> channel_gate(nn::Context<T>& ctx, const Var<T>& f1, GamParams<T>& p)
{
    auto tokens = permute(f1, {0, 2, 3, 1});
    auto h = nn::activation(p.act, p.mlp_in.forward(ctx, tokens));
    return sigmoid(permute(p.mlp_out.forward(ctx, h), {0, 3, 1, 2}));
}

// M_s: two 7x7 convolutions through a C/r bottleneck.
template <std::floating_point T>
Var<T> spatial_gate(nn::Context<T>& ctx, const Var<T>& x, GamParams<T>& p)
{
    return sigmoid(p.excite.forward(ctx, p.squeeze.forward(ctx, x)));
}

// F2 = M_c(F1) * F1, F3 = M_s(F2) * F2.
template <std::floating_point T>
Var<T> gam(nn::Context<T>& ctx, const Var<T>& f1, GamParams<T>& p)
{
    auto f2 = channel_gate(ctx, f1, p) * f1;
    return spatial_gate(ctx, f2, p) * f2;
}

// 1x1 conv -> 3x3 DSSConv -> GAM -> optional residual add.
template <std::floating_point T>
class GamBottleneck final : public nn::Module<T> {
public:
    GamBottleneck(std::size_t c_in, std::size_t c_out, bool shortcut, nn::ActKind act, std::size_t reduction,
                  std::mt19937_64& rng)
        : reduce_(nn::ConvSpec::block(c_in, c_out, 1, 1, act), rng), dss_(c_out, c_out, 3, 1, act, rng),
          gam_(c_out, reduction, act, rng), shortcut_(shortcut)
    {
        if (shortcut && c_in != c_out)
            throw ShapeError("GAMBottleneck: shortcut needs equal widths, got " + std::to_string(c_in) + "->"
                             + std::to_string(c_out));
    }

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override
    {
        const auto& x = in.at(0);
        auto y = gam(ctx, dss_(ctx, reduce_.forward(ctx, x)), gam_);
        return shortcut_ ? x + y : y;
    }

    void collect(const std::string& prefix, nn::TensorList<T>& out) override
    {
        reduce_.collect(nn::join_name(prefix, "cv1"), out);
        dss_.collect(nn::join_name(prefix, "cv2"), out);
        gam_.collect(nn::join_name(prefix, "gam"), out);
    }

    Shape out_shape(const std::vector<Shape>& in) const override
    {
        return dss_.out_shape({reduce_.out_shape(nn::single_input(in, "GAMBottleneck"))});
    }

    nn::LayerCost cost(const std::vector<Shape>& in) const override
    {
        const auto& s = nn::single_input(in, "GAMBottleneck");
        const auto mid = reduce_.out_shape(s);
        return reduce_.cost(s) + dss_.cost({mid}) + gam_.cost(dss_.out_shape({mid}));
    }

    std::string kind() const override { return "GAMBottleneck"; }

    GamParams<T>& gam_params() { return gam_; }
    const GamParams<T>& gam_params() const { return gam_; }

private:
    nn::Conv<T> reduce_;
    DssConv<T> dss_;
    GamParams<T> gam_;
    bool shortcut_;
};

} // namespace lyv5
