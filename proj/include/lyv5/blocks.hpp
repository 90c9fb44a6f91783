#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gam.hpp"
#include "sepvit.hpp"

namespace lyv5 {

template <std::floating_point T>
class ConvLayer final : public nn::Module<T> {
public:
    ConvLayer(const nn::ConvSpec& spec, std::mt19937_64& rng) : conv_(spec, rng) {}

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override { return conv_.forward(ctx, in.at(0)); }
    void collect(const std::string& prefix, nn::TensorList<T>& out) override { conv_.collect(prefix, out); }
    Shape out_shape(const std::vector<Shape>& in) const override
    {
        return conv_.out_shape(nn::single_input(in, "Conv"));
    }
    nn::LayerCost cost(const std::vector<Shape>& in) const override { return conv_.cost(nn::single_input(in, "Conv")); }
    std::string kind() const override { return conv_.spec.with_batchnorm ? "Conv" : "Conv2d"; }
    std::string args() const override
    {
        const auto& s = conv_.spec;
        return std::to_string(s.in_channels) + "->" + std::to_string(s.out_channels) + " k" + std::to_string(s.kernel)
               + " s" + std::to_string(s.stride) + (s.groups > 1 ? " g" + std::to_string(s.groups) : "");
    }

    nn::Conv<T>& conv() { return conv_; }

private:
    nn::Conv<T> conv_;
};

// Standard residual bottleneck: 1x1 conv -> 3x3 conv -> optional add.
template <std::floating_point T>
class Bottleneck final : public nn::Module<T> {
public:
    Bottleneck(std::size_t c_in, std::size_t c_out, bool shortcut, nn::ActKind act, std::mt19937_64& rng)
        : cv1_(nn::ConvSpec::block(c_in, c_out, 1, 1, act), rng), cv2_(nn::ConvSpec::block(c_out, c_out, 3, 1, act), rng),
          shortcut_(shortcut && c_in == c_out)
    {
    }

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override
    {
        const auto& x = in.at(0);
        auto y = cv2_.forward(ctx, cv1_.forward(ctx, x));
        return shortcut_ ? x + y : y;
    }
    void collect(const std::string& prefix, nn::TensorList<T>& out) override
    {
        cv1_.collect(nn::join_name(prefix, "cv1"), out);
        cv2_.collect(nn::join_name(prefix, "cv2"), out);
    }
    Shape out_shape(const std::vector<Shape>& in) const override
    {
        return cv2_.out_shape(cv1_.out_shape(nn::single_input(in, "Bottleneck")));
    }
    nn::LayerCost cost(const std::vector<Shape>& in) const override
    {
        const auto& s = nn::single_input(in, "Bottleneck");
        return cv1_.cost(s) + cv2_.cost(cv1_.out_shape(s));
    }
    std::string kind() const override { return "Bottleneck"; }

private:
    nn::Conv<T> cv1_, cv2_;
    bool shortcut_;
};

enum class BottleneckKind { standard, dss, gam };

struct C3Spec {
    std::size_t in_channels = 0, out_channels = 0, repeats = 1;
    bool shortcut = true;
    BottleneckKind bottleneck = BottleneckKind::standard;
    std::size_t gam_reduction = 8;
    double expansion = 0.5;

    // Width of the two inner branches. Rounded down to even so the
    // channel-shuffled variants always split cleanly.
    std::size_t hidden() const
    {
        auto h = static_cast<std::size_t>(std::lround(out_channels * expansion));
        if (bottleneck != BottleneckKind::standard) h -= h % 2;
        return std::max<std::size_t>(h, 1);
    }
};

// CSP block: two 1x1 branches, one runs through the bottleneck stack, then
// concatenation and a fusing 1x1 conv. DSSC3 is this block with DSS (or GAM)
// bottlenecks.
template <std::floating_point T>
class C3 final : public nn::Module<T> {
public:
    C3(const C3Spec& spec, nn::ActKind act, std::mt19937_64& rng)
        : spec_(spec), cv1_(nn::ConvSpec::block(spec.in_channels, spec.hidden(), 1, 1, act), rng),
          cv2_(nn::ConvSpec::block(spec.in_channels, spec.hidden(), 1, 1, act), rng),
          cv3_(nn::ConvSpec::block(2 * spec.hidden(), spec.out_channels, 1, 1, act), rng)
    {
        if (spec.repeats == 0) throw Error("C3: at least one bottleneck required");
        const std::size_t h = spec.hidden();
        for (std::size_t i = 0; i < spec.repeats; ++i) {
            switch (spec.bottleneck) {
            case BottleneckKind::standard: blocks_.push_back(std::make_unique<Bottleneck<T>>(h, h, spec.shortcut, act, rng)); break;
            case BottleneckKind::dss: blocks_.push_back(std::make_unique<DssBottleneck<T>>(h, h, spec.shortcut, act, rng)); break;
            case BottleneckKind::gam:
                blocks_.push_back(std::make_unique<GamBottleneck<T>>(h, h, spec.shortcut, act, spec.gam_reduction, rng));
                break;
            }
        }
    }

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override
    {
        const auto& x = in.at(0);
        auto a = cv1_.forward(ctx, x);
        for (auto& b : blocks_) a = (*b)(ctx, a);
        return cv3_.forward(ctx, concat<T>({a, cv2_.forward(ctx, x)}, 1));
    }

    void collect(const std::string& prefix, nn::TensorList<T>& out) override
    {
        cv1_.collect(nn::join_name(prefix, "cv1"), out);
        cv2_.collect(nn::join_name(prefix, "cv2"), out);
        cv3_.collect(nn::join_name(prefix, "cv3"), out);
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->collect(nn::join_name(prefix, "m." + std::to_string(i)), out);
    }

    Shape out_shape(const std::vector<Shape>& in) const override
    {
        auto s = cv1_.out_shape(nn::single_input(in, kind().c_str()));
        s[1] = spec_.out_channels;
        return s;
    }

    nn::LayerCost cost(const std::vector<Shape>& in) const override
    {
        const auto& s = nn::single_input(in, kind().c_str());
        auto branch = cv1_.out_shape(s);
        nn::LayerCost c = cv1_.cost(s) + cv2_.cost(s);
        for (const auto& b : blocks_) {
            c += b->cost({branch});
            branch = b->out_shape({branch});
        }
        branch[1] *= 2;
        return c + cv3_.cost(branch);
    }

    std::string kind() const override
    {
        switch (spec_.bottleneck) {
        case BottleneckKind::standard: return "C3";
        case BottleneckKind::dss: return "DSSC3";
        case BottleneckKind::gam: return "DSSC3-GAM";
        }
        return "C3";
    }
    std::string args() const override
    {
        return std::to_string(spec_.in_channels) + "->" + std::to_string(spec_.out_channels) + " n"
               + std::to_string(spec_.repeats) + (spec_.shortcut ? " residual" : "");
    }

    const C3Spec& spec() const { return spec_; }

private:
    C3Spec spec_;
    nn::Conv<T> cv1_, cv2_, cv3_;
    std::vector<nn::ModulePtr<T>> blocks_;
};

// Spatial pyramid pooling, fast form: three chained 5x5 max pools.
template <std::floating_point T>
class Sppf final : public nn::Module<T> {
public:
    Sppf(std::size_t c_in, std::size_t c_out, nn::ActKind act, std::mt19937_64& rng)
        : cv1_(nn::ConvSpec::block(c_in, c_in / 2, 1, 1, act), rng),
          cv2_(nn::ConvSpec::block(2 * c_in, c_out, 1, 1, act), rng)
    {
    }

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override
    {
        auto x = cv1_.forward(ctx, in.at(0));
        auto y1 = nn::maxpool2d(x, 5, 1, 2);
        auto y2 = nn::maxpool2d(y1, 5, 1, 2);
        auto y3 = nn::maxpool2d(y2, 5, 1, 2);
        return cv2_.forward(ctx, concat<T>({x, y1, y2, y3}, 1));
    }
    void collect(const std::string& prefix, nn::TensorList<T>& out) override
    {
        cv1_.collect(nn::join_name(prefix, "cv1"), out);
        cv2_.collect(nn::join_name(prefix, "cv2"), out);
    }
    Shape out_shape(const std::vector<Shape>& in) const override
    {
        auto s = nn::single_input(in, "SPPF");
        s[1] = cv2_.spec.out_channels;
        return s;
    }
    nn::LayerCost cost(const std::vector<Shape>& in) const override
    {
        auto s = nn::single_input(in, "SPPF");
        auto mid = cv1_.out_shape(s);
        auto cat = mid;
        cat[1] *= 4;
        return cv1_.cost(s) + cv2_.cost(cat);
    }
    std::string kind() const override { return "SPPF"; }
    std::string args() const override
    {
        return std::to_string(cv1_.spec.in_channels) + "->" + std::to_string(cv2_.spec.out_channels);
    }

private:
    nn::Conv<T> cv1_, cv2_;
};

template <std::floating_point T>
class Upsample final : public nn::Module<T> {
public:
    Var<T> forward(nn::Context<T>&, const std::vector<Var<T>>& in) override { return nn::upsample_nearest2(in.at(0)); }
    void collect(const std::string&, nn::TensorList<T>&) override {}
    Shape out_shape(const std::vector<Shape>& in) const override
    {
        auto s = nn::single_input(in, "Upsample");
        s[2] *= 2;
        s[3] *= 2;
        return s;
    }
    nn::LayerCost cost(const std::vector<Shape>& in) const override { return {0, 0, numel(out_shape(in))}; }
    std::string kind() const override { return "Upsample"; }
};

// Channel concatenation; the fusion operator of both necks.
template <std::floating_point T>
class Concat final : public nn::Module<T> {
public:
    Var<T> forward(nn::Context<T>&, const std::vector<Var<T>>& in) override { return concat<T>(in, 1); }
    void collect(const std::string&, nn::TensorList<T>&) override {}
    Shape out_shape(const std::vector<Shape>& in) const override
    {
        Shape s = in.at(0);
        for (std::size_t i = 1; i < in.size(); ++i) {
            if (in[i][0] != s[0] || in[i][2] != s[2] || in[i][3] != s[3])
                throw ShapeError("Concat: " + to_string(in[i]) + " does not match " + to_string(in[0]));
            s[1] += in[i][1];
        }
        return s;
    }
    nn::LayerCost cost(const std::vector<Shape>& in) const override { return {0, 0, numel(out_shape(in))}; }
    std::string kind() const override { return "Concat"; }
};

// C3-style wrapper around a SepViT block: cv1 -> block, cv2 bypass, concat,
// cv3. Maps whose sides are not multiples of the window size are zero padded
// on the bottom/right for the block and cropped back afterwards.
template <std::floating_point T>
class C3SepVit final : public nn::Module<T> {
public:
    C3SepVit(std::size_t c_in, std::size_t c_out, std::size_t ws, nn::ActKind act, std::mt19937_64& rng)
        : ws_(ws), cv1_(nn::ConvSpec::block(c_in, c_out / 2, 1, 1, act), rng),
          cv2_(nn::ConvSpec::block(c_in, c_out / 2, 1, 1, act), rng),
          cv3_(nn::ConvSpec::block(2 * (c_out / 2), c_out, 1, 1, act), rng), block_(c_out / 2, rng)
    {
    }

    Var<T> forward(nn::Context<T>& ctx, const std::vector<Var<T>>& in) override
    {
        const auto& x = in.at(0);
        auto a = cv1_.forward(ctx, x);
        const std::size_t h = a.dim(2), w = a.dim(3);
        auto padded = nn::pad_bottom_right(a, pad(h), pad(w));
        a = nn::crop_top_left(sepvit_block(ctx, padded, block_, ws_), h, w);
        return cv3_.forward(ctx, concat<T>({a, cv2_.forward(ctx, x)}, 1));
    }

    void collect(const std::string& prefix, nn::TensorList<T>& out) override
    {
        cv1_.collect(nn::join_name(prefix, "cv1"), out);
        cv2_.collect(nn::join_name(prefix, "cv2"), out);
        cv3_.collect(nn::join_name(prefix, "cv3"), out);
        block_.collect(nn::join_name(prefix, "sepvit"), out);
    }

    Shape out_shape(const std::vector<Shape>& in) const override
    {
        auto s = nn::single_input(in, "C3SepViT");
        s[1] = cv3_.spec.out_channels;
        return s;
    }

    nn::LayerCost cost(const std::vector<Shape>& in) const override
    {
        const auto& s = nn::single_input(in, "C3SepViT");
        auto mid = cv1_.out_shape(s);
        auto cat = mid;
        cat[1] *= 2;
        return cv1_.cost(s) + cv2_.cost(s) + cv3_.cost(cat)
               + sepvit_cost(block_, s[0], s[2] + pad(s[2]), s[3] + pad(s[3]), ws_);
    }

    std::string kind() const override { return "C3SepViT"; }
    std::string args() const override
    {
        return std::to_string(cv1_.spec.in_channels) + "->" + std::to_string(cv3_.spec.out_channels) + " d"
               + std::to_string(block_.dim) + " ws" + std::to_string(ws_);
    }

    std::size_t window_size() const { return ws_; }
    SepVitParams<T>& block() { return block_; }

private:
    std::size_t pad(std::size_t n) const { return (ws_ - n % ws_) % ws_; }

    std::size_t ws_;
    nn::Conv<T> cv1_, cv2_, cv3_;
    SepVitParams<T> block_;
};

} // namespace lyv5
