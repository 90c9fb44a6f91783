#pragma once

#include <chrono>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "blocks.hpp"
#include "dss.hpp"
#include "gam.hpp"
#include "gradcheck.hpp"
#include "loss.hpp"
#include "nn/activation.hpp"
#include "nn/conv.hpp"
#include "nn/norm.hpp"
#include "sepvit.hpp"

namespace lyv5 {

struct GradCase {
    std::string name;
    std::function<GradCheckReport()> run;
};

namespace detail {

inline Tensor<double> suite_uniform(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1)
{
    return Tensor<double>::uniform(std::move(s), lo, hi, rng);
}

// Every non-buffer tensor of a module or parameter pack, preceded by `x`.
template <class M>
std::vector<Tensor<double>*> trainables(M& m, Tensor<double>& x)
{
    nn::TensorList<double> list;
    m.collect("", list);
    std::vector<Tensor<double>*> wrt{&x};
    for (auto& t : list)
        if (t.role != nn::TensorRole::buffer) wrt.push_back(t.tensor);
    return wrt;
}

template <class F>
GradCheckReport named(std::string name, F&& f, const std::vector<Tensor<double>*>& wrt, GradCheckOptions opt = {})
{
    auto r = grad_check(std::forward<F>(f), wrt, opt);
    r.name = std::move(name);
    return r;
}

// Random activation inputs kept at least 0.05 away from the kinks at 0 and +-3.
inline Tensor<double> kink_free(std::size_t n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-4.5, 4.5);
    Tensor<double> t({n});
    auto d = t.data_mut();
    for (auto& v : d) {
        do v = u(rng);
        while (std::abs(v) < 0.05 || std::abs(std::abs(v) - 3) < 0.05);
    }
    return t;
}

inline nn::ConvSpec suite_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                               std::size_t groups, bool bias)
{
    nn::ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = k;
    s.stride = stride;
    s.padding = k / 2;
    s.groups = groups;
    s.has_bias = bias;
    return s;
}

// y = x^2 whose backward deliberately drops the factor 2.
inline Var<double> faulty_square(const Var<double>& x)
{
    Tensor<double> out(x.shape());
    auto src = x.data();
    auto dst = out.data_mut();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * src[i];
    return x.graph().record("faulty_square", std::move(out), {x}, [x](Node<double>& self) {
        auto gy = self.value.grad();
        auto gx = input_grad(self, 0);
        auto xs = x.data();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * xs[i];
    });
}

} // namespace detail

// Negative control: a gradient check that must fail.
inline GradCase faulty_gradient_case(std::uint64_t seed = 99)
{
    return {"faulty_square", [seed] {
                std::mt19937_64 rng(seed);
                auto x = detail::suite_uniform({6}, rng, 0.5, 1.5);
                return detail::named("faulty_square", [&](Graph<double>& g) { return detail::faulty_square(g.leaf(x)); },
                                     {&x});
            }};
}

// One finite-difference check per differentiable layer, at small random
// shapes in f64. Each case seeds its own generator so cases can run alone.
inline std::vector<GradCase> gradient_cases(std::uint64_t seed = 2024)
{
    using detail::named;
    using detail::suite_uniform;
    const auto act = nn::ActKind::mish();
    std::vector<GradCase> cases;
    auto add = [&](std::string name, std::function<GradCheckReport(std::mt19937_64&)> body) {
        const auto s = seed + cases.size();
        cases.push_back({name, [body, s] {
                             std::mt19937_64 rng(s);
                             return body(rng);
                         }});
    };

    add("conv2d", [](std::mt19937_64& rng) {
        const auto spec = detail::suite_conv(3, 4, 3, 2, 1, true);
        auto x = suite_uniform({2, 3, 5, 6}, rng);
        auto w = suite_uniform(spec.weight_shape(), rng);
        auto b = suite_uniform({4}, rng);
        return named("conv2d", [&](Graph<double>& g) {
            return nn::conv2d(g.leaf(x), g.leaf(w), std::optional<Var<double>>(g.leaf(b)), spec);
        }, {&x, &w, &b});
    });
    add("depthwise_conv", [](std::mt19937_64& rng) {
        const auto spec = detail::suite_conv(4, 4, 3, 1, 4, false);
        auto x = suite_uniform({1, 4, 5, 5}, rng);
        auto w = suite_uniform(spec.weight_shape(), rng);
        return named("depthwise_conv",
                     [&](Graph<double>& g) { return nn::conv2d(g.leaf(x), g.leaf(w), std::nullopt, spec); }, {&x, &w});
    });
    for (auto mode : {nn::Mode::train, nn::Mode::eval}) {
        const std::string name = mode == nn::Mode::train ? "batchnorm_train" : "batchnorm_eval";
        add(name, [mode, name](std::mt19937_64& rng) {
            auto x = suite_uniform({3, 2, 3, 3}, rng);
            auto gamma = suite_uniform({2}, rng, 0.5, 1.5);
            auto beta = suite_uniform({2}, rng);
            const Tensor<double> rm({2}, 0.1), rv({2}, 0.8);
            return named(name, [&](Graph<double>& g) {
                Tensor<double> m = rm.clone(), v = rv.clone();
                return nn::batchnorm2d(g.leaf(x), g.leaf(gamma), g.leaf(beta), m, v, mode);
            }, {&x, &gamma, &beta});
        });
    }
    add("layernorm", [](std::mt19937_64& rng) {
        auto x = suite_uniform({2, 3, 6}, rng);
        auto gm = suite_uniform({6}, rng, 0.5, 1.5);
        auto bt = suite_uniform({6}, rng);
        return named("layernorm", [&](Graph<double>& g) { return nn::layernorm(g.leaf(x), g.leaf(gm), g.leaf(bt)); },
                     {&x, &gm, &bt});
    });
    for (const auto& kind : {nn::ActKind::mish(), nn::ActKind::hswish(), nn::ActKind::leaky_relu(), nn::ActKind::gelu()}) {
        add(to_string(kind), [kind](std::mt19937_64& rng) {
            auto x = detail::kink_free(24, rng);
            return named(to_string(kind), [&](Graph<double>& g) { return nn::activation(kind, g.leaf(x)); }, {&x});
        });
    }
    add("dwa", [](std::mt19937_64& rng) {
        SepVitParams<double> p(6, rng);
        auto tokens = suite_uniform({1, 2, 5, 6}, rng);
        return named("dwa", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return dwa(ctx, g.leaf(tokens), p).out;
        }, {&tokens, &p.wq.weight, &p.wk.weight, &p.wv.weight});
    });
    add("pwa", [](std::mt19937_64& rng) {
        SepVitParams<double> p(6, rng);
        auto pixels = suite_uniform({1, 3, 4, 6}, rng);
        auto wt = suite_uniform({1, 3, 6}, rng);
        nn::TensorList<double> list;
        p.collect("", list);
        std::vector<Tensor<double>*> wrt{&pixels, &wt};
        for (auto& t : list) wrt.push_back(t.tensor);
        return named("pwa", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return pwa(ctx, g.leaf(pixels), g.leaf(wt), p).out;
        }, wrt);
    });
    add("sepvit_block", [](std::mt19937_64& rng) {
        SepVitParams<double> p(8, rng);
        p.window_token = suite_uniform({8}, rng, -0.5, 0.5);
        auto x = suite_uniform({1, 8, 4, 4}, rng);
        nn::TensorList<double> list;
        p.collect("", list);
        std::vector<Tensor<double>*> wrt{&x};
        for (auto& t : list) wrt.push_back(t.tensor);
        return named("sepvit_block", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return sepvit_block(ctx, g.leaf(x), p, 2);
        }, wrt);
    });
    add("dssconv", [act](std::mt19937_64& rng) {
        DssConv<double> m(4, 6, 3, 2, act, rng);
        auto x = suite_uniform({2, 4, 5, 5}, rng);
        return named("dssconv", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return m(ctx, g.leaf(x));
        }, detail::trainables(m, x));
    });
    add("dss_bottleneck", [act](std::mt19937_64& rng) {
        DssBottleneck<double> m(8, 8, true, act, rng);
        auto x = suite_uniform({1, 8, 4, 4}, rng);
        return named("dss_bottleneck", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return m(ctx, g.leaf(x));
        }, detail::trainables(m, x));
    });
    add("dssc3", [act](std::mt19937_64& rng) {
        C3Spec spec;
        spec.in_channels = spec.out_channels = 8;
        spec.bottleneck = BottleneckKind::dss;
        spec.shortcut = true;
        C3<double> m(spec, act, rng);
        auto x = suite_uniform({1, 8, 4, 4}, rng);
        return named("dssc3", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return m(ctx, g.leaf(x));
        }, detail::trainables(m, x));
    });
    add("gam", [act](std::mt19937_64& rng) {
        GamParams<double> p(4, 2, act, rng);
        auto x = suite_uniform({1, 4, 4, 4}, rng);
        return named("gam", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return gam(ctx, g.leaf(x), p);
        }, detail::trainables(p, x));
    });
    add("gam_bottleneck", [act](std::mt19937_64& rng) {
        GamBottleneck<double> m(4, 4, true, act, 2, rng);
        auto x = suite_uniform({1, 4, 4, 4}, rng);
        return named("gam_bottleneck", [&](Graph<double>& g) {
            nn::Context<double> ctx{g, nn::Mode::train};
            return m(ctx, g.leaf(x));
        }, detail::trainables(m, x));
    });
    for (auto kind : kAllBoxLossKinds) {
        const std::string name = "box_loss_" + to_string(kind);
        add(name, [kind, name](std::mt19937_64&) {
            // Overlapping, nested and disjoint pairs with distinct aspect ratios;
            // no pair has touching edges.
            Tensor<double> pred({4, 4}, {1.0, 1.2, 2.0, 3.1, 0.3, -0.2, 1.1, 0.7, 5.0, 4.0, 1.5, 2.5, -1.0, 2.0, 3.3, 1.4});
            const Tensor<double> target({4, 4},
                                        {1.6, 0.7, 2.6, 2.2, 0.1, 0.1, 3.0, 2.0, 1.0, 0.5, 1.2, 0.8, -0.3, 1.6, 2.1, 2.9});
            return named(name, [&](Graph<double>& g) { return sum(box_loss_rows(kind, g.leaf(pred), target)); },
                         {&pred});
        });
    }
    add("training_loss", [](std::mt19937_64& rng) {
        constexpr std::size_t img = 64, nc = 2;
        std::vector<Tensor<double>> heads;
        for (std::size_t s : {8, 16, 32})
            heads.push_back(Tensor<double>::normal({2, 3 * (5 + nc), img / s, img / s}, 0, 1, rng));
        const std::vector<GroundTruth> gts{{0, 0, Box{20.3, 17.8, 14.0, 22.0}}, {1, 1, Box{41.3, 30.9, 19.0, 7.5}}};
        LossConfig cfg;
        // A prediction-dependent objectness target is held constant by
        // design, which central differences cannot reproduce.
        cfg.objectness_iou_ratio = 0.0;
        GradCheckOptions opt;
        opt.h = 1e-6;
        return named("training_loss", [&](Graph<double>& g) {
            std::vector<Var<double>> vars;
            for (auto& h : heads) vars.push_back(g.leaf(h));
            return training_loss(vars, gts, AnchorSet::for_input(img), nc, cfg).total;
        }, {&heads[0], &heads[1], &heads[2]}, opt);
    });
    return cases;
}

struct GradSuiteResult {
    std::vector<GradCheckReport> reports;
    double seconds = 0;
    bool passed() const
    {
        return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed; });
    }
};

// Runs the cases, printing "layer<TAB>max_rel_err<TAB>checked<TAB>PASS|FAIL".
inline GradSuiteResult run_gradient_suite(const std::vector<GradCase>& cases, std::ostream* out = nullptr)
{
    GradSuiteResult res;
    const auto t0 = std::chrono::steady_clock::now();
    if (out) *out << "layer\tmax_rel_err\tchecked\tstatus\n";
    for (const auto& c : cases) {
        auto r = c.run();
        if (r.name.empty()) r.name = c.name;
        if (out) *out << r.name << '\t' << r.max_rel_err << '\t' << r.checked << '\t' << (r.passed ? "PASS" : "FAIL") << '\n';
        res.reports.push_back(std::move(r));
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace lyv5
