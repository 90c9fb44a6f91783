#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ops.hpp"

namespace lyv5 {

struct GradCheckOptions {
    double h = 1e-4;
    double tol = 1e-4;
    // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
    // vanishing gradients from turning roundoff into huge ratios.
    double floor = 1e-3;
    std::uint64_t seed = 0x5eed;
};

struct GradCheckEntry {
    std::size_t input = 0;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_err = 0;
};

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0;
    std::size_t checked = 0;
    bool non_finite = false;
    bool passed = true;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> flagged;
};

// Compares reverse-mode gradients of f against central differences for every
// element of every tensor in `wrt`. f builds its computation in the graph it
// is handed, taking the tensors in `wrt` (or module parameters aliasing them)
// through Graph::leaf. Non-scalar outputs are reduced with fixed random
// weights so every output element contributes.
template <class F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor<double>*>& wrt, GradCheckOptions opt = {})
{
    GradCheckReport report;
    std::optional<Tensor<double>> projection;
    auto scalar_of = [&](Graph<double>& g) {
        Var<double> y = f(g);
        if (y.numel() == 1) return y;
        if (!projection || projection->shape() != y.shape()) {
            std::mt19937_64 rng(opt.seed);
            projection = Tensor<double>::uniform(y.shape(), -1.0, 1.0, rng);
        }
        return sum(y * g.constant(*projection));
    };

    for (auto* t : wrt) {
        t->set_requires_grad(true);
        t->zero_grad();
    }
    {
        Graph<double> g;
        auto loss = scalar_of(g);
        if (!std::isfinite(loss.item())) report.non_finite = true;
        g.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (auto* t : wrt) analytic.emplace_back(t->grad().begin(), t->grad().end());

    auto evaluate = [&] {
        Graph<double> g(false);
        return scalar_of(g).item();
    };

    for (std::size_t k = 0; k < wrt.size(); ++k) {
        auto data = wrt[k]->data_mut();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + opt.h;
            const double fp = evaluate();
            data[i] = orig - opt.h;
            const double fm = evaluate();
            data[i] = orig;
            const double num = (fp - fm) / (2 * opt.h);
            const double ana = analytic[k][i];
            GradCheckEntry e{k, i, ana, num, 0.0};
            if (!std::isfinite(num) || !std::isfinite(ana)) {
                report.non_finite = true;
                e.rel_err = std::numeric_limits<double>::infinity();
            } else {
                const double denom = std::max({std::abs(ana), std::abs(num), opt.floor});
                e.rel_err = std::abs(ana - num) / denom;
            }
            ++report.checked;
            if (e.rel_err > report.max_rel_err || report.checked == 1) {
                report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
                if (e.rel_err >= report.worst.rel_err) report.worst = e;
            }
            if (e.rel_err > opt.tol) report.flagged.push_back(e);
        }
    }
    report.passed = !report.non_finite && report.flagged.empty();
    return report;
}

// Single-input form: f maps the input Var to an output Var.
template <class F>
GradCheckReport grad_check(F&& f, Tensor<double> x, double h = 1e-4, double tol = 1e-4)
{
    GradCheckOptions opt;
    opt.h = h;
    opt.tol = tol;
    return grad_check([&](Graph<double>& g) { return f(g.leaf(x)); }, {&x}, opt);
}

} // namespace lyv5
