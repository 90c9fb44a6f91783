#pragma once

#include <random>
#include <vector>

#include "blocks.hpp"

namespace lyv5 {

// Layer indices of the three pyramid levels (strides 8, 16, 32).
struct PyramidIndices {
    int p3 = 0, p4 = 0, p5 = 0;
};

struct BifpnWidths {
    std::size_t p3_in = 64, p4_in = 128, p5_in = 256; // incoming levels
    std::size_t lat5 = 128;                           // 1x1 lateral on P5
    std::size_t td4 = 128;                            // top-down P4 node
    std::size_t lat4 = 64;                            // 1x1 lateral on the top-down P4 node
    std::size_t out3 = 64, out4 = 64, out5 = 64;      // output nodes

    // Base widths scaled by a width multiple, rounded up to multiples of 8.
    static BifpnWidths scaled(double width_multiple);
};

inline std::size_t make_divisible(double x, std::size_t divisor = 8)
{
    const auto d = static_cast<double>(divisor);
    return static_cast<std::size_t>(std::ceil(x / d)) * divisor;
}

inline BifpnWidths BifpnWidths::scaled(double w)
{
    BifpnWidths b;
    b.p3_in = make_divisible(256 * w);
    b.p4_in = make_divisible(512 * w);
    b.p5_in = make_divisible(1024 * w);
    b.lat5 = make_divisible(512 * w);
    b.td4 = make_divisible(512 * w);
    b.lat4 = make_divisible(256 * w);
    b.out3 = b.out4 = b.out5 = make_divisible(256 * w);
    return b;
}

struct BifpnOptions {
    BifpnWidths widths;
    nn::ActKind act = nn::ActKind::mish();
    std::size_t repeats = 1;
    // GAM bottlenecks in the two deepest output nodes (P4 and P5 outputs).
    bool gam = true;
    std::size_t gam_reduction = 8;
};

// Appends the unweighted bidirectional neck to `net`.
//   top-down : lat5 = 1x1(P5); td4 = DSSC3[up(lat5), P4]; lat4 = 1x1(td4)
//              out3 = DSSC3[up(lat4), P3]
//   bottom-up: out4 = DSSC3[DSSConv_s2(out3), lat4, P4]   (P4 -> out4 is the same-level skip)
//              out5 = DSSC3[DSSConv_s2(out4), lat5]
// All fusions are concatenations; there are no learned fusion weights.
template <std::floating_point T>
PyramidIndices append_light_bifpn(nn::Network<T>& net, PyramidIndices in, const BifpnOptions& opt,
                                  std::mt19937_64& rng)
{
    const auto& w = opt.widths;
    auto dssc3 = [&](std::size_t c_in, std::size_t c_out, bool with_gam) {
        C3Spec s;
        s.in_channels = c_in;
        s.out_channels = c_out;
        s.repeats = opt.repeats;
        s.shortcut = false;
        s.bottleneck = with_gam ? BottleneckKind::gam : BottleneckKind::dss;
        s.gam_reduction = opt.gam_reduction;
        return std::make_unique<C3<T>>(s, opt.act, rng);
    };
    auto conv1 = [&](std::size_t c_in, std::size_t c_out) {
        return std::make_unique<ConvLayer<T>>(nn::ConvSpec::block(c_in, c_out, 1, 1, opt.act), rng);
    };

    const int lat5 = net.add({in.p5}, conv1(w.p5_in, w.lat5));
    net.add({-1}, std::make_unique<Upsample<T>>());
    net.add({-1, in.p4}, std::make_unique<Concat<T>>());
    net.add({-1}, dssc3(w.lat5 + w.p4_in, w.td4, false));
    const int lat4 = net.add({-1}, conv1(w.td4, w.lat4));
    net.add({-1}, std::make_unique<Upsample<T>>());
    net.add({-1, in.p3}, std::make_unique<Concat<T>>());
    const int out3 = net.add({-1}, dssc3(w.lat4 + w.p3_in, w.out3, false));

    net.add({-1}, std::make_unique<DssConv<T>>(w.out3, w.out3, 3, 2, opt.act, rng));
    net.add({-1, lat4, in.p4}, std::make_unique<Concat<T>>());
    const int out4 = net.add({-1}, dssc3(w.out3 + w.lat4 + w.p4_in, w.out4, opt.gam));
    net.add({-1}, std::make_unique<DssConv<T>>(w.out4, w.out4, 3, 2, opt.act, rng));
    net.add({-1, lat5}, std::make_unique<Concat<T>>());
    const int out5 = net.add({-1}, dssc3(w.out4 + w.lat5, w.out5, opt.gam));
    return {out3, out4, out5};
}

// Standalone neck over three externally supplied pyramid levels.
template <std::floating_point T>
class LightBifpn {
public:
    LightBifpn(const BifpnOptions& opt, std::mt19937_64& rng) : net_(3)
    {
        const auto out = append_light_bifpn(net_, {0, 1, 2}, opt, rng);
        net_.set_outputs({out.p3, out.p4, out.p5});
    }

    std::vector<Var<T>> operator()(nn::Context<T>& ctx, const std::vector<Var<T>>& levels)
    {
        if (levels.size() != 3)
            throw ShapeError("bifpn_fuse: expected 3 pyramid levels, got " + std::to_string(levels.size()));
        return net_.forward(ctx, levels);
    }

    nn::Network<T>& network() { return net_; }

private:
    nn::Network<T> net_;
};

template <std::floating_point T>
std::vector<Var<T>> bifpn_fuse(nn::Context<T>& ctx, LightBifpn<T>& neck, const std::vector<Var<T>>& levels)
{
    return neck(ctx, levels);
}

} // namespace lyv5
