#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "kernels.hpp"

namespace lyv5 {

enum class BinaryOp { add, sub, mul, div };

namespace detail {

// Supported broadcast forms: identical shapes, scalar b, or b holding one
// value per entry of a.shape()[axis] (the "per-channel" form).
struct Broadcast {
    enum class Kind { same, scalar, channel } kind = Kind::same;
    std::size_t channels = 1;
    std::size_t inner = 1;

    std::size_t index(std::size_t i) const noexcept
    {
        switch (kind) {
        case Kind::same: return i;
        case Kind::scalar: return 0;
        case Kind::channel: return (i / inner) % channels;
        }
        return 0;
    }
};

inline Broadcast resolve_broadcast(const Shape& a, const Shape& b, std::size_t axis, const char* op)
{
    Broadcast bc;
    if (a == b) return bc;
    if (numel(b) == 1) {
        bc.kind = Broadcast::Kind::scalar;
        return bc;
    }
    if (axis < a.size() && numel(b) == a[axis]) {
        bool ok = b.size() == 1;
        if (!ok && b.size() == a.size()) {
            ok = true;
            for (std::size_t i = 0; i < b.size(); ++i)
                if (i != axis && b[i] != 1) ok = false;
        }
        if (ok) {
            bc.kind = Broadcast::Kind::channel;
            bc.channels = a[axis];
            bc.inner = 1;
            for (std::size_t i = axis + 1; i < a.size(); ++i) bc.inner *= a[i];
            return bc;
        }
    }
    throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b)
                     + " are not broadcast-compatible");
}

inline std::vector<std::size_t> strides_of(const Shape& s)
{
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

} // namespace detail

template <std::floating_point T>
Var<T> elementwise(BinaryOp op, const Var<T>& a, const Var<T>& b, std::size_t channel_axis = 1)
{
    static constexpr const char* names[] = {"add", "sub", "mul", "div"};
    const char* name = names[static_cast<int>(op)];
    auto& g = common_graph<T>({&a, &b});
    const auto bc = detail::resolve_broadcast(a.shape(), b.shape(), channel_axis, name);
    const auto av = a.value();
    const auto bv = b.value();
    Tensor<T> out(a.shape());
    auto y = out.data_mut();
    auto x = av.data();
    auto z = bv.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        const T p = x[i], q = z[bc.index(i)];
        switch (op) {
        case BinaryOp::add: y[i] = p + q; break;
        case BinaryOp::sub: y[i] = p - q; break;
        case BinaryOp::mul: y[i] = p * q; break;
        case BinaryOp::div: y[i] = p / q; break;
        }
    }
    return g.record(name, std::move(out), {a, b}, [op, bc, av, bv](Node<T>& self) {
        auto gy = self.value.grad();
        auto x = av.data();
        auto z = bv.data();
        if (auto ga = input_grad(self, 0); !ga.empty()) {
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const T q = z[bc.index(i)];
                switch (op) {
                case BinaryOp::add:
                case BinaryOp::sub: ga[i] += gy[i]; break;
                case BinaryOp::mul: ga[i] += gy[i] * q; break;
                case BinaryOp::div: ga[i] += gy[i] / q; break;
                }
            }
        }
        if (auto gb = input_grad(self, 1); !gb.empty()) {
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const std::size_t j = bc.index(i);
                const T q = z[j];
                switch (op) {
                case BinaryOp::add: gb[j] += gy[i]; break;
                case BinaryOp::sub: gb[j] -= gy[i]; break;
                case BinaryOp::mul: gb[j] += gy[i] * x[i]; break;
                case BinaryOp::div: gb[j] -= gy[i] * x[i] / (q * q); break;
                }
            }
        }
    });
}

// Elementwise op against a plain scalar constant.
template <std::floating_point T>
Var<T> elementwise(BinaryOp op, const Var<T>& a, T s)
{
    auto& g = common_graph<T>({&a});
    return elementwise(op, a, g.constant(Tensor<T>::scalar(s)));
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, T s)
{
    auto& g = common_graph<T>({&a});
    Tensor<T> out(a.shape());
    auto y = out.data_mut();
    auto x = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * s;
    return g.record("scale", std::move(out), {a}, [s](Node<T>& self) {
        auto gy = self.value.grad();
        auto ga = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * s;
    });
}

template <std::floating_point T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <std::floating_point T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <std::floating_point T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <std::floating_point T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::div, a, b); }
template <std::floating_point T> Var<T> operator*(const Var<T>& a, T s) { return scale(a, s); }
template <std::floating_point T> Var<T> operator*(T s, const Var<T>& a) { return scale(a, s); }
template <std::floating_point T> Var<T> operator-(const Var<T>& a) { return scale(a, T(-1)); }
template <std::floating_point T> Var<T> operator+(const Var<T>& a, T s) { return elementwise(BinaryOp::add, a, s); }
template <std::floating_point T> Var<T> operator-(const Var<T>& a, T s) { return elementwise(BinaryOp::sub, a, s); }

// Elementwise map with derivative df(x, y) = dy/dx.
template <std::floating_point T, class F, class DF>
Var<T> unary(const char* name, const Var<T>& a, F f, DF df)
{
    auto& g = common_graph<T>({&a});
    const auto av = a.value();
    Tensor<T> out(a.shape());
    auto y = out.data_mut();
    auto x = av.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
    const auto yv = out;
    return g.record(name, std::move(out), {a}, [av, yv, df](Node<T>& self) {
        auto gy = self.value.grad();
        auto ga = input_grad(self, 0);
        auto x = av.data();
        auto y = yv.data();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * df(x[i], y[i]);
    });
}

template <std::floating_point T>
Var<T> exp(const Var<T>& a)
{
    return unary("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <std::floating_point T>
Var<T> log(const Var<T>& a)
{
    return unary("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <std::floating_point T>
Var<T> square(const Var<T>& a)
{
    return unary("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <std::floating_point T>
T sigmoid_scalar(T x)
{
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <std::floating_point T>
Var<T> sigmoid(const Var<T>& a)
{
    return unary("sigmoid", a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <std::floating_point T>
Var<T> sum(const Var<T>& a)
{
    auto& g = common_graph<T>({&a});
    long double acc = 0;
    for (T v : a.data()) acc += v;
    return g.record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {a}, [](Node<T>& self) {
        const T gy = self.value.grad()[0];
        for (auto& v : input_grad(self, 0)) v += gy;
    });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& a)
{
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Batched matrix product. a: (..., M, K); b: (..., K, N) with identical
// leading axes, or a plain (K, N) matrix shared across the batch.
template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b)
{
    auto& g = common_graph<T>({&a, &b});
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + to_string(a.shape()) + " and "
                         + to_string(b.shape()));
    const std::size_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
    const std::size_t Kb = b.dim(b.rank() - 2), N = b.dim(b.rank() - 1);
    if (K != Kb)
        throw ShapeError("matmul: inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    const bool shared_b = b.rank() == 2;
    Shape lead(a.shape().begin(), a.shape().end() - 2);
    if (!shared_b) {
        Shape blead(b.shape().begin(), b.shape().end() - 2);
        if (blead != lead)
            throw ShapeError("matmul: batch axes differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const std::size_t batch = numel(lead);
    Shape oshape = lead;
    oshape.push_back(M);
    oshape.push_back(N);
    const auto av = a.value();
    const auto bv = b.value();
    Tensor<T> out(oshape);
    {
        const T* A = av.data().data();
        const T* B = bv.data().data();
        T* C = out.data_mut().data();
        if (shared_b) {
            // All batch rows share b: one (batch*M, K) x (K, N) product.
            gemm_acc(batch * M, N, K, A, K, 1, B, N, C, N);
        } else {
            for (std::size_t s = 0; s < batch; ++s)
                gemm_acc(M, N, K, A + s * M * K, K, 1, B + s * K * N, N, C + s * M * N, N);
        }
    }
    return g.record("matmul", std::move(out), {a, b}, [av, bv, batch, M, K, N, shared_b](Node<T>& self) {
        const T* gC = self.value.grad().data();
        const T* A = av.data().data();
        const T* B = bv.data().data();
        if (auto ga = input_grad(self, 0); !ga.empty()) {
            // dA = dC * B^T; B^T addressed by strides.
            if (shared_b) {
                std::vector<T> bt(K * N);
                transpose_into(B, K, N, bt.data());
                gemm_acc(batch * M, K, N, gC, N, 1, bt.data(), K, ga.data(), K);
            } else {
                std::vector<T> bt(K * N);
                for (std::size_t s = 0; s < batch; ++s) {
                    transpose_into(B + s * K * N, K, N, bt.data());
                    gemm_acc(M, K, N, gC + s * M * N, N, 1, bt.data(), K, ga.data() + s * M * K, K);
                }
            }
        }
        if (auto gb = input_grad(self, 1); !gb.empty()) {
            // dB = A^T * dC, A^T addressed by strides.
            if (shared_b) {
                gemm_acc(K, N, batch * M, A, 1, K, gC, N, gb.data(), N);
            } else {
                for (std::size_t s = 0; s < batch; ++s)
                    gemm_acc(K, N, M, A + s * M * K, 1, K, gC + s * M * N, N, gb.data() + s * K * N, N);
            }
        }
    });
}

// Zero-copy reshape.
template <std::floating_point T>
Var<T> reshape(const Var<T>& a, Shape shape)
{
    auto& g = common_graph<T>({&a});
    if (numel(shape) != a.numel())
        throw ShapeError("reshape: cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
    Tensor<T> out = a.value().view(std::move(shape));
    return g.record("reshape", std::move(out), {a}, [](Node<T>& self) {
        auto gy = self.value.grad();
        auto ga = input_grad(self, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    });
}

inline constexpr std::size_t kZeroFill = std::numeric_limits<std::size_t>::max();

// out[i] = a[index[i]], or 0 where index[i] == kZeroFill. The backward pass
// scatters gradients back through the same map. Every data-movement op
// (permute, window partition, channel shuffle, padding) is a gather.
template <std::floating_point T>
Var<T> gather(const Var<T>& a, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index,
              const char* name = "gather")
{
    auto& g = common_graph<T>({&a});
    if (index->size() != numel(out_shape))
        throw ShapeError(std::string(name) + ": index map size does not match output shape " + to_string(out_shape));
    Tensor<T> out(std::move(out_shape));
    auto y = out.data_mut();
    auto x = a.data();
    const auto& idx = *index;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = idx[i] == kZeroFill ? T(0) : x[idx[i]];
    return g.record(name, std::move(out), {a}, [index](Node<T>& self) {
        auto gy = self.value.grad();
        auto ga = input_grad(self, 0);
        const auto& idx = *index;
        for (std::size_t i = 0; i < gy.size(); ++i)
            if (idx[i] != kZeroFill) ga[idx[i]] += gy[i];
    });
}

template <std::floating_point T>
Var<T> permute(const Var<T>& a, const std::vector<std::size_t>& perm)
{
    const auto& s = a.shape();
    if (perm.size() != s.size()) throw ShapeError("permute: permutation rank mismatch for " + to_string(s));
    std::vector<bool> seen(perm.size(), false);
    for (auto p : perm) {
        if (p >= perm.size() || seen[p]) throw ShapeError("permute: invalid permutation");
        seen[p] = true;
    }
    Shape os(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) os[i] = s[perm[i]];
    const auto ist = detail::strides_of(s);
    auto index = std::make_shared<std::vector<std::size_t>>(numel(os));
    std::vector<std::size_t> coord(os.size(), 0);
    for (std::size_t i = 0; i < index->size(); ++i) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < os.size(); ++d) src += coord[d] * ist[perm[d]];
        (*index)[i] = src;
        for (std::size_t d = os.size(); d-- > 0;) {
            if (++coord[d] < os[d]) break;
            coord[d] = 0;
        }
    }
    return gather(a, std::move(os), std::move(index), "permute");
}

// Swap the last two axes.
template <std::floating_point T>
Var<T> transpose(const Var<T>& a)
{
    std::vector<std::size_t> perm(a.rank());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[a.rank() - 1], perm[a.rank() - 2]);
    return permute(a, perm);
}

template <std::floating_point T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis)
{
    if (xs.empty()) throw ShapeError("concat: no inputs");
    auto& g = common_graph<T>({&xs.front()});
    const Shape& s0 = xs.front().shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + to_string(s0));
    Shape os = s0;
    os[axis] = 0;
    for (const auto& x : xs) {
        if (x.graph_ptr() != &g) throw Error("concat: inputs recorded in different graphs");
        const Shape& s = x.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d)
            if (d != axis && s[d] != s0[d]) ok = false;
        if (!ok) throw ShapeError("concat: " + to_string(s) + " does not match " + to_string(s0) + " off axis");
        os[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
    std::vector<std::size_t> widths;
    for (const auto& x : xs) widths.push_back(x.dim(axis) * inner);
    const std::size_t row = os[axis] * inner;
    Tensor<T> out(os);
    auto y = out.data_mut();
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        auto x = xs[k].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.begin() + o * widths[k], widths[k], y.begin() + o * row + off);
        off += widths[k];
    }
    return g.record("concat", std::move(out), xs, [widths, outer, row](Node<T>& self) {
        auto gy = self.value.grad();
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (auto ga = input_grad(self, k); !ga.empty())
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < widths[k]; ++j) ga[o * widths[k] + j] += gy[o * row + off + j];
            off += widths[k];
        }
    });
}

template <std::floating_point T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t start, std::size_t length)
{
    auto& g = common_graph<T>({&a});
    const Shape& s = a.shape();
    if (axis >= s.size() || length == 0 || start + length > s[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length)
                         + ") invalid on axis " + std::to_string(axis) + " of " + to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    Shape os = s;
    os[axis] = length;
    const std::size_t in_row = s[axis] * inner, out_row = length * inner, off = start * inner;
    Tensor<T> out(os);
    auto y = out.data_mut();
    auto x = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.begin() + o * in_row + off, out_row, y.begin() + o * out_row);
    return g.record("slice", std::move(out), {a}, [outer, in_row, out_row, off](Node<T>& self) {
        auto gy = self.value.grad();
        auto ga = input_grad(self, 0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < out_row; ++j) ga[o * in_row + off + j] += gy[o * out_row + j];
    });
}

// Numerically stable softmax along `axis` (max subtracted before exp).
template <std::floating_point T>
Var<T> softmax(const Var<T>& a, std::size_t axis)
{
    auto& g = common_graph<T>({&a});
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("softmax: axis out of range for " + to_string(s));
    std::size_t outer = 1, inner = 1;
    const std::size_t n = s[axis];
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    Tensor<T> out(s);
    auto y = out.data_mut();
    auto x = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
            T total = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const T e = std::exp(x[base + k * inner] - mx);
                y[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < n; ++k) y[base + k * inner] /= total;
        }
    const auto yv = out;
    return g.record("softmax", std::move(out), {a}, [yv, outer, inner, n](Node<T>& self) {
        auto gy = self.value.grad();
        auto ga = input_grad(self, 0);
        auto y = yv.data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                T dot = 0;
                for (std::size_t k = 0; k < n; ++k) dot += gy[base + k * inner] * y[base + k * inner];
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t i = base + k * inner;
                    ga[i] += y[i] * (gy[i] - dot);
                }
            }
    });
}

// Stops gradient flow: same values, recorded as a constant.
template <std::floating_point T>
Var<T> detach(const Var<T>& a)
{
    return common_graph<T>({&a}).constant(a.value());
}

} // namespace lyv5
