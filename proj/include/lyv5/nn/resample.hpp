#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "../ops.hpp"

namespace lyv5::nn {

// Nearest-neighbour 2x upsampling of an NCHW map.
template <std::floating_point T>
Var<T> upsample_nearest2(const Var<T>& x)
{
    if (x.rank() != 4) throw ShapeError("upsample: expected NCHW input, got " + to_string(x.shape()));
    const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    auto index = std::make_shared<std::vector<std::size_t>>(NC * 4 * H * W);
    std::size_t i = 0;
    for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx) (*index)[i++] = (p * H + y / 2) * W + xx / 2;
    return gather(x, {x.dim(0), x.dim(1), 2 * H, 2 * W}, std::move(index), "upsample");
}

// Max pooling with implicit -inf padding. Gradient goes to the first
// maximal element of each window.
template <std::floating_point T>
Var<T> maxpool2d(const Var<T>& x, std::size_t k, std::size_t stride, std::size_t padding)
{
    auto& g = common_graph<T>({&x});
    if (x.rank() != 4) throw ShapeError("maxpool2d: expected NCHW input, got " + to_string(x.shape()));
    if (k == 0 || stride == 0 || 2 * padding > k) throw ShapeError("maxpool2d: invalid window geometry");
    const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H + 2 * padding < k || W + 2 * padding < k) throw ShapeError("maxpool2d: window larger than input");
    const std::size_t Ho = (H + 2 * padding - k) / stride + 1, Wo = (W + 2 * padding - k) / stride + 1;
    Tensor<T> out({x.dim(0), x.dim(1), Ho, Wo});
    std::vector<std::size_t> argmax(out.numel());
    {
        const T* X = x.data().data();
        T* Y = out.data_mut().data();
        std::size_t o = 0;
        for (std::size_t p = 0; p < NC; ++p)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t at = 0;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const long long iy = static_cast<long long>(oy * stride + ky) - static_cast<long long>(padding);
                        if (iy < 0 || iy >= static_cast<long long>(H)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long long ix =
                                static_cast<long long>(ox * stride + kx) - static_cast<long long>(padding);
                            if (ix < 0 || ix >= static_cast<long long>(W)) continue;
                            const std::size_t src = (p * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix);
                            if (X[src] > best) {
                                best = X[src];
                                at = src;
                            }
                        }
                    }
                    Y[o] = best;
                    argmax[o] = at;
                }
    }
    return g.record("maxpool2d", std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
        auto gy = self.value.grad();
        auto gx = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
    });
}

// Channel order c = a * (C/g) + b is rewritten as b * g + a: view channels
// as (g, C/g), transpose, flatten.
inline std::vector<std::size_t> channel_shuffle_order(std::size_t C, std::size_t groups)
{
    if (groups == 0 || C % groups)
        throw ShapeError("channel_shuffle: " + std::to_string(C) + " channels not divisible by "
                         + std::to_string(groups) + " groups");
    const std::size_t per = C / groups;
    std::vector<std::size_t> order(C);
    for (std::size_t b = 0; b < per; ++b)
        for (std::size_t a = 0; a < groups; ++a) order[b * groups + a] = a * per + b;
    return order;
}

template <std::floating_point T>
Var<T> channel_shuffle(const Var<T>& x, std::size_t groups)
{
    if (x.rank() != 4) throw ShapeError("channel_shuffle: expected NCHW input, got " + to_string(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const auto order = channel_shuffle_order(C, groups);
    if (groups == 1) return x;
    auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
    std::size_t i = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) (*index)[i++] = (n * C + order[c]) * HW + p;
    return gather(x, x.shape(), std::move(index), "channel_shuffle");
}

// Zero padding on the bottom/right edges of an NCHW map.
template <std::floating_point T>
Var<T> pad_bottom_right(const Var<T>& x, std::size_t pad_h, std::size_t pad_w)
{
    if (pad_h == 0 && pad_w == 0) return x;
    const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Hp = H + pad_h, Wp = W + pad_w;
    auto index = std::make_shared<std::vector<std::size_t>>(NC * Hp * Wp, kZeroFill);
    for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) (*index)[(p * Hp + y) * Wp + xx] = (p * H + y) * W + xx;
    return gather(x, {x.dim(0), x.dim(1), Hp, Wp}, std::move(index), "pad");
}

// Top-left h x w crop of an NCHW map.
template <std::floating_point T>
Var<T> crop_top_left(const Var<T>& x, std::size_t h, std::size_t w)
{
    if (h == x.dim(2) && w == x.dim(3)) return x;
    return slice(slice(x, 2, 0, h), 3, 0, w);
}

} // namespace lyv5::nn
