#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "lyv5/data/synth.hpp"
#include "lyv5/gradsuite.hpp"
#include "lyv5/kernels.hpp"
#include "lyv5/train.hpp"

using namespace lyv5;

namespace {

// Raised for bad input detected before any work starts (exit code 1).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class F>
auto validated(F&& f)
{
    try {
        return f();
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
}

struct Flags {
    std::optional<std::string> config, profile;
    std::map<std::string, std::string> settings; // config key -> value
    std::string split = "test";
    std::size_t n = 0;
    std::size_t runs = 1;
    bool inject_fault = false;
};

void add_setting(CLI::App* app, Flags& f, const std::string& flag, const std::string& key, const std::string& help)
{
    app->add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.settings[key] = v; }, help);
}

void add_common(CLI::App* app, Flags& f)
{
    app->add_option("--config", f.config, "flat key = value config file");
    app->add_option("--profile", f.profile, "preset: toy or paper")->check(CLI::IsMember({"toy", "paper"}));
    add_setting(app, f, "--model", "model", "baseline or light");
    add_setting(app, f, "--nc", "nc", "number of classes");
    add_setting(app, f, "--img", "img", "square input size");
    add_setting(app, f, "--epochs", "epochs", "training epochs");
    add_setting(app, f, "--batch", "batch", "batch size");
    add_setting(app, f, "--lr", "lr", "initial learning rate");
    add_setting(app, f, "--box", "box", "box loss: iou giou diou ciou eiou siou");
    add_setting(app, f, "--act", "act", "activation: leakyrelu hswish mish");
    add_setting(app, f, "--seed", "seed", "random seed");
    add_setting(app, f, "--data", "data", "dataset root");
    add_setting(app, f, "--weights", "weights", "checkpoint path");
    add_setting(app, f, "--threads", "threads", "worker threads");
    add_setting(app, f, "--iters", "iters", "iteration cap (0 = none)");
    add_setting(app, f, "--out", "out", "output directory");
}

TrainConfig resolve(const Flags& f)
{
    return validated([&] {
        auto cfg = TrainConfig::profile(f.profile.value_or("paper"));
        if (f.config) apply_config_file(cfg, *f.config);
        for (const auto& [key, value] : f.settings) cfg.set(key, value);
        cfg.validate();
        set_num_threads(cfg.threads);
        return cfg;
    });
}

std::vector<data::LoadedSample> load_samples(const std::vector<data::SampleRef>& refs, const TrainConfig& cfg)
{
    std::vector<data::LoadedSample> out(refs.size());
    parallel_for(refs.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out[i] = data::load_sample(refs[i], cfg.nc, cfg.img);
    });
    return out;
}

// Fails when the checkpoint's head width implies a different class count.
void check_checkpoint_classes(Detector<float>& model, const std::filesystem::path& path)
{
    const auto stored = read_checkpoint(path);
    const auto head = std::to_string(model.head_layers()[0]) + ".bias";
    for (const auto& t : stored) {
        if (t.name != head) continue;
        const std::size_t per_anchor = t.shape.empty() ? 0 : t.shape[0] / kAnchorsPerLevel;
        if (per_anchor < 5 || t.shape[0] % kAnchorsPerLevel)
            throw Error("checkpoint head '" + head + "' has an unexpected shape " + to_string(t.shape));
        if (per_anchor - 5 != model.config().nc)
            throw Error("class-count mismatch: checkpoint has " + std::to_string(per_anchor - 5)
                        + " classes, config has " + std::to_string(model.config().nc));
        return;
    }
    throw Error("checkpoint has no tensor '" + head + "': was it saved from a different model?");
}

void load_weights(Detector<float>& model, const std::filesystem::path& path)
{
    validated([&] {
        check_checkpoint_classes(model, path);
        load_checkpoint(model.named_tensors(), path);
        return 0;
    });
}

int cmd_synth(const Flags& f)
{
    auto cfg = resolve(f);
    const auto out = validated([&] {
        if (f.n == 0) throw Error("synth: --n must be positive");
        if (f.settings.count("out")) return cfg.out;
        if (!cfg.data.empty()) return cfg.data;
        throw Error("synth: give --out or --data for the output directory");
    });
    data::SynthOptions opt;
    opt.width = opt.height = cfg.img;
    const auto stems = data::synth_generate(f.n, cfg.seed, out, opt);
    std::cout << "wrote " << stems.size() << " images to " << out.string() << '\n';
    return 0;
}

int cmd_train(const Flags& f)
{
    auto cfg = resolve(f);
    auto [train_set, val_set] = validated([&] {
        if (cfg.data.empty()) throw Error("train: --data is required");
        const auto refs = data::load_split(cfg.data, cfg.seed);
        auto tr = load_samples(data::select(refs, data::SplitTag::train), cfg);
        if (tr.empty()) throw Error("train: training split is empty");
        return std::pair{std::move(tr), load_samples(data::select(refs, data::SplitTag::val), cfg)};
    });
    Detector<float> model(cfg.model_config(), cfg.seed);
    if (!cfg.weights.empty()) load_weights(model, cfg.weights);

    std::filesystem::create_directories(cfg.out);
    {
        std::ofstream c(cfg.out / "config.txt");
        write_config(c, cfg);
    }
    std::ofstream log_file(cfg.out / "train.log");
    struct Tee : std::streambuf {
        std::streambuf *a, *b;
        int overflow(int c) override
        {
            if (traits_type::eq_int_type(c, traits_type::eof())) return traits_type::not_eof(c);
            const bool ok = !traits_type::eq_int_type(a->sputc(traits_type::to_char_type(c)), traits_type::eof())
                            && !traits_type::eq_int_type(b->sputc(traits_type::to_char_type(c)), traits_type::eof());
            return ok ? c : traits_type::eof();
        }
        int sync() override { return a->pubsync() | b->pubsync(); }
    } tee;
    tee.a = std::cout.rdbuf();
    tee.b = log_file.rdbuf();
    std::ostream log(&tee);

    std::cout << "training " << to_string(cfg.model) << " on " << train_set.size() << " images (" << val_set.size()
              << " val)\n";
    const auto r = train(model, cfg, train_set, val_set, &log, cfg.out);
    log << "iterations " << r.iterations << "  best_val_mAP50 ";
    if (r.best_map)
        log << *r.best_map;
    else
        log << "n/a";
    log << "\ncheckpoint " << (cfg.out / "best.ckpt").string() << '\n';
    log.flush();
    return 0;
}

int cmd_eval(const Flags& f)
{
    auto cfg = resolve(f);
    auto samples = validated([&] {
        if (cfg.weights.empty()) throw Error("eval: --weights is required");
        if (cfg.data.empty()) throw Error("eval: --data is required");
        const auto tag = data::parse_split_tag(f.split);
        auto s = load_samples(data::select(data::load_split(cfg.data, cfg.seed), tag), cfg);
        if (s.empty()) throw Error("eval: the " + f.split + " split is empty");
        return s;
    });
    Detector<float> model(cfg.model_config(), cfg.seed);
    load_weights(model, cfg.weights);
    write_report(std::cout, evaluate_model(model, samples));
    return 0;
}

int cmd_cost(const Flags& f)
{
    auto cfg = resolve(f);
    // Reported at the 640 reference size unless --img is given explicitly.
    const std::size_t img = f.settings.count("img") ? cfg.img : 640;
    std::cout << "layer\tparams\tflops\n";
    std::array<nn::LayerCost, 2> totals;
    for (auto kind : {ModelKind::baseline, ModelKind::light}) {
        auto c = cfg;
        c.model = kind;
        c.img = img;
        const auto mc = c.model_config();
        const auto report = validated([&] {
            mc.validate();
            return Detector<float>(mc, cfg.seed).cost(img);
        });
        const auto name = to_string(kind);
        for (const auto& l : report.layers)
            std::cout << name << '/' << l.index << '.' << l.kind << '\t' << l.cost.params << '\t' << l.cost.flops << '\n';
        std::cout << name << "/total\t" << report.total.params << '\t' << report.total.flops << '\n';
        totals[kind == ModelKind::light] = report.total;
    }
    auto pct = [](double base, double light) { return 100.0 * (1.0 - light / base); };
    std::cout << std::fixed << std::setprecision(2) << "reduction_pct\t"
              << pct(static_cast<double>(totals[0].params), static_cast<double>(totals[1].params)) << '\t'
              << pct(static_cast<double>(totals[0].flops), static_cast<double>(totals[1].flops)) << '\n';
    return 0;
}

int cmd_bench(const Flags& f)
{
    auto cfg = resolve(f);
    Detector<float> model(cfg.model_config(), cfg.seed);
    if (!cfg.weights.empty()) load_weights(model, cfg.weights);
    const std::size_t n = f.n ? f.n : 20;
    std::cout << "run\tmean_ms\tp95_ms\tfps\n" << std::fixed << std::setprecision(3);
    for (std::size_t run = 1; run <= f.runs; ++run) {
        const auto r = bench_detector(model, cfg.img, n);
        std::cout << run << '\t' << r.mean_ms << '\t' << r.p95_ms << '\t' << r.fps << '\n';
    }
    return 0;
}

int cmd_gradcheck(const Flags& f)
{
    (void)resolve(f);
    auto cases = gradient_cases();
    if (f.inject_fault) cases.push_back(faulty_gradient_case());
    const auto r = run_gradient_suite(cases, &std::cout);
    const auto failed = std::count_if(r.reports.begin(), r.reports.end(), [](const auto& x) { return !x.passed; });
    std::cout << (failed ? "FAIL" : "PASS") << ": " << r.reports.size() - static_cast<std::size_t>(failed) << '/'
              << r.reports.size() << " layers within tolerance in " << std::setprecision(2) << std::fixed << r.seconds
              << " s\n";
    return failed ? 2 : 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Light-YOLOv5 micro-library: synthetic data, training, evaluation, cost model, benchmarks"};
    app.require_subcommand(1);
    Flags flags;

    auto* synth = app.add_subcommand("synth", "render a synthetic flame/smoke dataset");
    synth->add_option("--n", flags.n, "number of images")->default_val(64);
    auto* train_cmd = app.add_subcommand("train", "train a detector and save checkpoints");
    auto* eval = app.add_subcommand("eval", "per-class AP, P, R and mAP@0.5 for a checkpoint");
    eval->add_option("--split", flags.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* cost = app.add_subcommand("cost", "per-layer parameters and FLOPs for both models");
    auto* bench = app.add_subcommand("bench", "inference latency and FPS");
    bench->add_option("--n", flags.n, "timed forward passes per run");
    bench->add_option("--runs", flags.runs, "repeat the measurement")->check(CLI::PositiveNumber);
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite over every layer");
    grad->add_flag("--inject-fault", flags.inject_fault, "append a layer with a deliberately wrong gradient");
    for (auto* s : {synth, train_cmd, eval, cost, bench, grad}) add_common(s, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) return cmd_synth(flags);
        if (*train_cmd) return cmd_train(flags);
        if (*eval) return cmd_eval(flags);
        if (*cost) return cmd_cost(flags);
        if (*bench) return cmd_bench(flags);
        if (*grad) return cmd_gradcheck(flags);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
