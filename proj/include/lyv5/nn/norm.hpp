#pragma once

#include <cmath>
#include <vector>

#include "../ops.hpp"

namespace lyv5::nn {

enum class Mode { train, eval };

struct BatchNormConfig {
    double eps = 1e-5;
    double momentum = 0.03;
};

// Per-channel normalization of an NCHW tensor. In train mode the batch
// statistics normalize and the running statistics move toward them
// (running_var tracks the unbiased estimate); eval mode reads the running
// statistics only.
template <std::floating_point T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                   Tensor<T>& running_var, Mode mode, BatchNormConfig cfg = {})
{
    auto& g = common_graph<T>({&x, &gamma, &beta});
    if (x.rank() != 4) throw ShapeError("batchnorm2d: expected NCHW input, got " + to_string(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
        throw ShapeError("batchnorm2d: parameter length differs from channel count " + std::to_string(C));
    const std::size_t M = N * HW;
    const auto xv = x.value();
    const T* X = xv.data().data();
    const T* G = gamma.data().data();
    const T* B = beta.data().data();

    std::vector<T> mean(C), inv_std(C);
    if (mode == Mode::train) {
        auto rm = running_mean.data_mut();
        auto rv = running_var.data_mut();
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* p = X + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(M);
            double ss = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* p = X + (n * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    const double d = p[i] - mu;
                    ss += d * d;
                }
            }
            const double var = ss / static_cast<double>(M);
            mean[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + cfg.eps));
            const double unbiased = M > 1 ? ss / static_cast<double>(M - 1) : var;
            rm[c] = static_cast<T>((1 - cfg.momentum) * rm[c] + cfg.momentum * mu);
            rv[c] = static_cast<T>((1 - cfg.momentum) * rv[c] + cfg.momentum * unbiased);
        }
    } else {
        auto rm = running_mean.data();
        auto rv = running_var.data();
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = rm[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + cfg.eps));
        }
    }

    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    {
        T* Y = out.data_mut().data();
        T* Xh = xhat.data_mut().data();
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t off = (n * C + c) * HW;
                const T mu = mean[c], is = inv_std[c], gc = G[c], bc = B[c];
                for (std::size_t i = 0; i < HW; ++i) {
                    const T h = (X[off + i] - mu) * is;
                    Xh[off + i] = h;
                    Y[off + i] = gc * h + bc;
                }
            }
    }
    const auto gv = gamma.value();
    const bool batch_stats = mode == Mode::train;
    return g.record("batchnorm2d", std::move(out), {x, gamma, beta},
                    [xhat, gv, inv_std, N, C, HW, M, batch_stats](Node<T>& self) {
                        const T* gy = self.value.grad().data();
                        const T* Xh = xhat.data().data();
                        const T* G = gv.data().data();
                        std::vector<T> sum_dy(C, T(0)), sum_dy_xh(C, T(0));
                        for (std::size_t n = 0; n < N; ++n)
                            for (std::size_t c = 0; c < C; ++c) {
                                const std::size_t off = (n * C + c) * HW;
                                T a = 0, b = 0;
                                for (std::size_t i = 0; i < HW; ++i) {
                                    a += gy[off + i];
                                    b += gy[off + i] * Xh[off + i];
                                }
                                sum_dy[c] += a;
                                sum_dy_xh[c] += b;
                            }
                        if (auto gg = input_grad(self, 1); !gg.empty())
                            for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_xh[c];
                        if (auto gb = input_grad(self, 2); !gb.empty())
                            for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
                        auto gx = input_grad(self, 0);
                        if (gx.empty()) return;
                        const T inv_m = T(1) / static_cast<T>(M);
                        for (std::size_t n = 0; n < N; ++n)
                            for (std::size_t c = 0; c < C; ++c) {
                                const std::size_t off = (n * C + c) * HW;
                                const T k = G[c] * inv_std[c];
                                if (batch_stats) {
                                    const T m1 = sum_dy[c] * inv_m, m2 = sum_dy_xh[c] * inv_m;
                                    for (std::size_t i = 0; i < HW; ++i)
                                        gx[off + i] += k * (gy[off + i] - m1 - Xh[off + i] * m2);
                                } else {
                                    for (std::size_t i = 0; i < HW; ++i) gx[off + i] += k * gy[off + i];
                                }
                            }
                    });
}

// Normalization over the trailing axis of any-rank input, then affine.
template <std::floating_point T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5)
{
    auto& g = common_graph<T>({&x, &gamma, &beta});
    const std::size_t D = x.dim(x.rank() - 1);
    if (gamma.numel() != D || beta.numel() != D)
        throw ShapeError("layernorm: parameter length differs from feature width " + std::to_string(D));
    const std::size_t rows = x.numel() / D;
    const T* X = x.data().data();
    const T* G = gamma.data().data();
    const T* B = beta.data().data();
    Tensor<T> out(x.shape()), xhat(x.shape());
    std::vector<T> inv_std(rows);
    {
        T* Y = out.data_mut().data();
        T* Xh = xhat.data_mut().data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* p = X + r * D;
            double s = 0;
            for (std::size_t i = 0; i < D; ++i) s += p[i];
            const double mu = s / static_cast<double>(D);
            double ss = 0;
            for (std::size_t i = 0; i < D; ++i) ss += (p[i] - mu) * (p[i] - mu);
            const double is = 1.0 / std::sqrt(ss / static_cast<double>(D) + eps);
            inv_std[r] = static_cast<T>(is);
            for (std::size_t i = 0; i < D; ++i) {
                const T h = static_cast<T>((p[i] - mu) * is);
                Xh[r * D + i] = h;
                Y[r * D + i] = G[i] * h + B[i];
            }
        }
    }
    const auto gv = gamma.value();
    return g.record("layernorm", std::move(out), {x, gamma, beta}, [xhat, gv, inv_std, rows, D](Node<T>& self) {
        const T* gy = self.value.grad().data();
        const T* Xh = xhat.data().data();
        const T* G = gv.data().data();
        auto gx = input_grad(self, 0);
        auto gg = input_grad(self, 1);
        auto gb = input_grad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* dy = gy + r * D;
            const T* h = Xh + r * D;
            T m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < D; ++i) {
                const T d = dy[i] * G[i];
                m1 += d;
                m2 += d * h[i];
                if (!gg.empty()) gg[i] += dy[i] * h[i];
                if (!gb.empty()) gb[i] += dy[i];
            }
            if (gx.empty()) continue;
            m1 /= static_cast<T>(D);
            m2 /= static_cast<T>(D);
            for (std::size_t i = 0; i < D; ++i) gx[r * D + i] += inv_std[r] * (dy[i] * G[i] - m1 - h[i] * m2);
        }
    });
}

} // namespace lyv5::nn
