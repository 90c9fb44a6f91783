#pragma once

#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "../kernels.hpp"
#include "../ops.hpp"
#include "activation.hpp"
#include "cost.hpp"

namespace lyv5::nn {

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
    bool has_bias = false;
    ActKind activation = ActKind::identity();
    bool with_batchnorm = false;

    // "same" padding for odd kernels, the convention of the detector blocks.
    static ConvSpec block(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t s, ActKind act,
                          std::size_t groups = 1)
    {
        ConvSpec spec;
        spec.in_channels = c_in;
        spec.out_channels = c_out;
        spec.kernel = k;
        spec.stride = s;
        spec.padding = k / 2;
        spec.groups = groups;
        spec.activation = act;
        spec.with_batchnorm = true;
        return spec;
    }

    void validate() const
    {
        if (groups == 0 || in_channels % groups || out_channels % groups)
            throw ShapeError("conv: channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels)
                             + " not divisible by groups " + std::to_string(groups));
        if (kernel == 0 || stride == 0) throw ShapeError("conv: kernel and stride must be >= 1");
    }

    bool depthwise() const noexcept { return groups == in_channels && out_channels == in_channels && groups > 1; }

    Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }

    std::size_t out_extent(std::size_t in) const
    {
        if (in + 2 * padding < kernel)
            throw ShapeError("conv: input extent " + std::to_string(in) + " smaller than kernel");
        return (in + 2 * padding - kernel) / stride + 1;
    }

    Shape out_shape(const Shape& in) const
    {
        if (in.size() != 4) throw ShapeError("conv: expected NCHW input, got " + to_string(in));
        return {in[0], out_channels, out_extent(in[2]), out_extent(in[3])};
    }
};

// params = C_out * (C_in / groups) * k^2 (+ C_out bias) (+ 2 C_out for BN);
// FLOPs = 2 * weight count * H' * W' per image.
inline LayerCost layer_cost(const ConvSpec& spec, const Shape& in)
{
    spec.validate();
    const auto out = spec.out_shape(in);
    const std::uint64_t weights = spec.out_channels * (spec.in_channels / spec.groups) * spec.kernel * spec.kernel;
    LayerCost c;
    c.params = weights + (spec.has_bias ? spec.out_channels : 0) + (spec.with_batchnorm ? 2 * spec.out_channels : 0);
    c.flops = 2 * weights * out[2] * out[3] * in[0];
    c.activations = numel(out);
    return c;
}

namespace detail {

struct ConvGeom {
    std::size_t N, C, H, W, Co, Ho, Wo, k, s, p, groups;
    std::size_t cin_g() const { return C / groups; }
    std::size_t cout_g() const { return Co / groups; }
    std::size_t P() const { return Ho * Wo; }
    bool plain_1x1() const { return k == 1 && s == 1 && p == 0; }
};

// First/last+1 output index whose tap (offset `kk`) lands inside [0, n).
inline void valid_range(std::size_t n, std::size_t out_n, std::size_t kk, std::size_t s, std::size_t p,
                        std::size_t& lo, std::size_t& hi)
{
    const long long pk = static_cast<long long>(p) - static_cast<long long>(kk);
    long long l = pk > 0 ? (pk + static_cast<long long>(s) - 1) / static_cast<long long>(s) : 0;
    long long h = (static_cast<long long>(n) - 1 + pk) >= 0
                      ? (static_cast<long long>(n) - 1 + pk) / static_cast<long long>(s) + 1
                      : 0;
    l = std::max<long long>(l, 0);
    h = std::min<long long>(h, static_cast<long long>(out_n));
    lo = static_cast<std::size_t>(l);
    hi = static_cast<std::size_t>(std::max(l, h));
}

template <class T>
void im2col(const T* x, const ConvGeom& g, std::size_t c0, std::size_t cn, T* col)
{
    const std::size_t P = g.P();
    for (std::size_t c = 0; c < cn; ++c) {
        const T* plane = x + (c0 + c) * g.H * g.W;
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* row = col + ((c * g.k + ky) * g.k + kx) * P;
                std::fill(row, row + P, T(0));
                std::size_t ylo, yhi, xlo, xhi;
                valid_range(g.H, g.Ho, ky, g.s, g.p, ylo, yhi);
                valid_range(g.W, g.Wo, kx, g.s, g.p, xlo, xhi);
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    const T* src = plane + (oy * g.s + ky - g.p) * g.W;
                    T* dst = row + oy * g.Wo;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.s + kx - g.p];
                }
            }
    }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, std::size_t c0, std::size_t cn, T* dx)
{
    const std::size_t P = g.P();
    for (std::size_t c = 0; c < cn; ++c) {
        T* plane = dx + (c0 + c) * g.H * g.W;
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* row = col + ((c * g.k + ky) * g.k + kx) * P;
                std::size_t ylo, yhi, xlo, xhi;
                valid_range(g.H, g.Ho, ky, g.s, g.p, ylo, yhi);
                valid_range(g.W, g.Wo, kx, g.s, g.p, xlo, xhi);
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    T* dst = plane + (oy * g.s + ky - g.p) * g.W;
                    const T* src = row + oy * g.Wo;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.s + kx - g.p] += src[ox];
                }
            }
    }
}

// One depthwise plane: y[oy, ox] += sum_{ky,kx} w[ky,kx] * x[oy*s+ky-p, ox*s+kx-p].
template <class T>
void depthwise_plane(const T* x, const T* w, const ConvGeom& g, T* y)
{
    for (std::size_t ky = 0; ky < g.k; ++ky)
        for (std::size_t kx = 0; kx < g.k; ++kx) {
            const T wv = w[ky * g.k + kx];
            std::size_t ylo, yhi, xlo, xhi;
            valid_range(g.H, g.Ho, ky, g.s, g.p, ylo, yhi);
            valid_range(g.W, g.Wo, kx, g.s, g.p, xlo, xhi);
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
                const T* src = x + (oy * g.s + ky - g.p) * g.W + kx - g.p;
                T* dst = y + oy * g.Wo;
                if (g.s == 1)
                    for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] += wv * src[ox];
                else
                    for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] += wv * src[ox * g.s];
            }
        }
}

template <class T>
void depthwise_plane_backward(const T* x, const T* w, const T* gy, const ConvGeom& g, T* dx, T* dw)
{
    for (std::size_t ky = 0; ky < g.k; ++ky)
        for (std::size_t kx = 0; kx < g.k; ++kx) {
            const T wv = w[ky * g.k + kx];
            T acc = 0;
            std::size_t ylo, yhi, xlo, xhi;
            valid_range(g.H, g.Ho, ky, g.s, g.p, ylo, yhi);
            valid_range(g.W, g.Wo, kx, g.s, g.p, xlo, xhi);
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
                const std::size_t off = (oy * g.s + ky - g.p) * g.W + kx - g.p;
                const T* src = x + off;
                const T* gr = gy + oy * g.Wo;
                if (dx) {
                    T* d = dx + off;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox * g.s] += wv * gr[ox];
                }
                for (std::size_t ox = xlo; ox < xhi; ++ox) acc += gr[ox] * src[ox * g.s];
            }
            if (dw) dw[ky * g.k + kx] += acc;
        }
}

} // namespace detail

// 2-D cross-correlation over NCHW input with weight (C_out, C_in/groups, k, k).
// groups == C_in == C_out is the depthwise case: each output channel m is
// sum_{i,j} K[m,i,j] * P[m, y*s+i-p, x*s+j-p].
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const std::type_identity_t<Var<T>>& weight,
              const std::optional<std::type_identity_t<Var<T>>>& bias, const ConvSpec& spec)
{
    spec.validate();
    auto& graph = common_graph<T>({&x, &weight});
    if (x.rank() != 4) throw ShapeError("conv2d: expected NCHW input, got " + to_string(x.shape()));
    if (x.dim(1) != spec.in_channels)
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, spec expects "
                         + std::to_string(spec.in_channels));
    if (weight.shape() != spec.weight_shape())
        throw ShapeError("conv2d: weight shape " + to_string(weight.shape()) + " != expected "
                         + to_string(spec.weight_shape()));
    if (bias && bias->numel() != spec.out_channels) throw ShapeError("conv2d: bias length mismatch");

    const Shape os = spec.out_shape(x.shape());
    const detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), spec.out_channels, os[2], os[3],
                             spec.kernel, spec.stride, spec.padding, spec.groups};
    const bool dw = spec.depthwise();
    const auto xv = x.value();
    const auto wv = weight.value();
    Tensor<T> out(os);
    {
        const T* X = xv.data().data();
        const T* Wt = wv.data().data();
        T* Y = out.data_mut().data();
        const std::size_t P = g.P(), cg = g.cin_g(), og = g.cout_g(), kk = cg * g.k * g.k;
        parallel_for(g.N, [&](std::size_t n0, std::size_t n1) {
            std::vector<T> col;
            for (std::size_t n = n0; n < n1; ++n) {
                const T* xn = X + n * g.C * g.H * g.W;
                T* yn = Y + n * g.Co * P;
                if (dw) {
                    for (std::size_t c = 0; c < g.C; ++c)
                        detail::depthwise_plane(xn + c * g.H * g.W, Wt + c * g.k * g.k, g, yn + c * P);
                    continue;
                }
                for (std::size_t grp = 0; grp < g.groups; ++grp) {
                    const T* B = nullptr;
                    if (g.plain_1x1()) {
                        B = xn + grp * cg * P;
                    } else {
                        col.resize(kk * P);
                        detail::im2col(xn, g, grp * cg, cg, col.data());
                        B = col.data();
                    }
                    gemm_acc(og, P, kk, Wt + grp * og * kk, kk, 1, B, P, yn + grp * og * P, P);
                }
            }
        });
    }
    std::vector<Var<T>> inputs{x, weight};
    std::optional<Tensor<T>> bv;
    if (bias) {
        inputs.push_back(*bias);
        bv = bias->value();
        auto y = out.data_mut();
        auto b = bv->data();
        const std::size_t P = g.P();
        for (std::size_t n = 0; n < g.N; ++n)
            for (std::size_t c = 0; c < g.Co; ++c) {
                T* row = y.data() + (n * g.Co + c) * P;
                for (std::size_t i = 0; i < P; ++i) row[i] += b[c];
            }
    }
    const bool has_bias = static_cast<bool>(bias);
    return graph.record("conv2d", std::move(out), inputs, [g, dw, xv, wv, has_bias](Node<T>& self) {
        const T* gy = self.value.grad().data();
        const T* X = xv.data().data();
        const T* Wt = wv.data().data();
        auto gx = input_grad(self, 0);
        auto gw = input_grad(self, 1);
        const std::size_t P = g.P(), cg = g.cin_g(), og = g.cout_g(), kk = cg * g.k * g.k;
        if (has_bias) {
            if (auto gb = input_grad(self, 2); !gb.empty())
                for (std::size_t n = 0; n < g.N; ++n)
                    for (std::size_t c = 0; c < g.Co; ++c) {
                        const T* row = gy + (n * g.Co + c) * P;
                        T acc = 0;
                        for (std::size_t i = 0; i < P; ++i) acc += row[i];
                        gb[c] += acc;
                    }
        }
        if (dw) {
            for (std::size_t n = 0; n < g.N; ++n)
                for (std::size_t c = 0; c < g.C; ++c) {
                    const std::size_t plane = (n * g.C + c);
                    detail::depthwise_plane_backward(X + plane * g.H * g.W, Wt + c * g.k * g.k, gy + plane * P, g,
                                                     gx.empty() ? nullptr : gx.data() + plane * g.H * g.W,
                                                     gw.empty() ? nullptr : gw.data() + c * g.k * g.k);
                }
            return;
        }
        std::vector<T> col, colT, dcol;
        for (std::size_t n = 0; n < g.N; ++n) {
            const T* xn = X + n * g.C * g.H * g.W;
            const T* gyn = gy + n * g.Co * P;
            for (std::size_t grp = 0; grp < g.groups; ++grp) {
                const T* gyg = gyn + grp * og * P;
                if (!gw.empty()) {
                    // dW_g += dY_g (og x P) * col^T (P x kk)
                    colT.resize(P * kk);
                    if (g.plain_1x1()) {
                        transpose_into(xn + grp * cg * P, kk, P, colT.data());
                    } else {
                        col.resize(kk * P);
                        detail::im2col(xn, g, grp * cg, cg, col.data());
                        transpose_into(col.data(), kk, P, colT.data());
                    }
                    gemm_acc(og, kk, P, gyg, P, 1, colT.data(), kk, gw.data() + grp * og * kk, kk);
                }
                if (!gx.empty()) {
                    // dcol = W_g^T (kk x og) * dY_g (og x P)
                    T* gxn = gx.data() + n * g.C * g.H * g.W;
                    if (g.plain_1x1()) {
                        gemm_acc(kk, P, og, Wt + grp * og * kk, 1, kk, gyg, P, gxn + grp * cg * P, P);
                    } else {
                        dcol.assign(kk * P, T(0));
                        gemm_acc(kk, P, og, Wt + grp * og * kk, 1, kk, gyg, P, dcol.data(), P);
                        detail::col2im_add(dcol.data(), g, grp * cg, cg, gxn);
                    }
                }
            }
        }
    });
}

// 1x1 convolution, groups = 1.
template <std::floating_point T>
Var<T> pointwise_conv(const Var<T>& x, const std::type_identity_t<Var<T>>& weight,
                      const std::optional<std::type_identity_t<Var<T>>>& bias = std::nullopt)
{
    ConvSpec spec;
    spec.in_channels = x.dim(1);
    spec.out_channels = weight.dim(0);
    spec.kernel = 1;
    spec.has_bias = static_cast<bool>(bias);
    return conv2d(x, weight, bias, spec);
}

} // namespace lyv5::nn
