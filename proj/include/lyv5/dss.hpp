#pragma once

#include <random>
#include <string>

#include "nn/module.hpp"
#include "nn/resample.hpp"

namespace lyv5 {

inline constexpr std::size_t kShuffleGroups = 2;

// Depthwise k x k (BN, act) -> pointwise 1x1 (BN, act) -> channel shuffle.
template <std::floating_point T>
class DssConv final : public nn::Module<T> {
public:
    DssConv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride, nn::ActKind act,
            std::mt19937_64& rng)
        : depthwise_(nn::ConvSpec::block(c_in, c_in, k, stride, act, c_in), rng),
          pointwise_(nn::ConvSpec::block(c_in, c_out, 1, 1, act), rng)
    {
        if (c_out % kShuffleGroups)
            throw ShapeError("DSSConv: output width " + std::to_string(c_out) + " must be even for channel shuffle");
    }

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override
    {
        auto y = pointwise_.forward(ctx, depthwise_.forward(ctx, in.at(0)));
        return nn::channel_shuffle(y, kShuffleGroups);
    }

    void collect(const std::string& prefix, nn::TensorList<T>& out) override
    {
        depthwise_.collect(nn::join_name(prefix, "dw"), out);
        pointwise_.collect(nn::join_name(prefix, "pw"), out);
    }

    Shape out_shape(const std::vector<Shape>& in) const override
    {
        return pointwise_.out_shape(depthwise_.out_shape(nn::single_input(in, "DSSConv")));
    }

    nn::LayerCost cost(const std::vector<Shape>& in) const override
    {
        const auto& s = nn::single_input(in, "DSSConv");
        return depthwise_.cost(s) + pointwise_.cost(depthwise_.out_shape(s));
    }

    std::string kind() const override { return "DSSConv"; }
    std::string args() const override
    {
        return std::to_string(depthwise_.spec.in_channels) + "->" + std::to_string(pointwise_.spec.out_channels)
               + " k" + std::to_string(depthwise_.spec.kernel) + " s" + std::to_string(depthwise_.spec.stride);
    }

    nn::Conv<T>& depthwise() { return depthwise_; }
    nn::Conv<T>& pointwise() { return pointwise_; }

private:
    nn::Conv<T> depthwise_, pointwise_;
};

// 1x1 conv -> 3x3 DSSConv -> optional residual add.
template <std::floating_point T>
class DssBottleneck final : public nn::Module<T> {
public:
    DssBottleneck(std::size_t c_in, std::size_t c_out, bool shortcut, nn::ActKind act, std::mt19937_64& rng,
                  double expansion = 1.0)
        : reduce_(nn::ConvSpec::block(c_in, hidden(c_out, expansion), 1, 1, act), rng),
          dss_(hidden(c_out, expansion), c_out, 3, 1, act, rng), shortcut_(shortcut)
    {
        if (shortcut && c_in != c_out)
            throw ShapeError("DSSBottleneck: shortcut needs equal widths, got " + std::to_string(c_in) + "->"
                             + std::to_string(c_out));
    }

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override
    {
        const auto& x = in.at(0);
        auto y = dss_(ctx, reduce_.forward(ctx, x));
        return shortcut_ ? x + y : y;
    }

    void collect(const std::string& prefix, nn::TensorList<T>& out) override
    {
        reduce_.collect(nn::join_name(prefix, "cv1"), out);
        dss_.collect(nn::join_name(prefix, "cv2"), out);
    }

    Shape out_shape(const std::vector<Shape>& in) const override
    {
        return dss_.out_shape({reduce_.out_shape(nn::single_input(in, "DSSBottleneck"))});
    }

    nn::LayerCost cost(const std::vector<Shape>& in) const override
    {
        const auto& s = nn::single_input(in, "DSSBottleneck");
        return reduce_.cost(s) + dss_.cost({reduce_.out_shape(s)});
    }

    std::string kind() const override { return "DSSBottleneck"; }

    static std::size_t hidden(std::size_t c_out, double e) { return static_cast<std::size_t>(c_out * e); }

private:
    nn::Conv<T> reduce_;
    DssConv<T> dss_;
    bool shortcut_;
};

} // namespace lyv5
