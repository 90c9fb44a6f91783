#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>

#include "checkpoint.hpp"
#include "data/dataset.hpp"
#include "metrics.hpp"
#include "optim.hpp"

namespace lyv5 {

struct TrainConfig {
    ModelKind model = ModelKind::light;
    std::size_t nc = 2;
    std::size_t img = 448;
    std::size_t epochs = 100;
    std::size_t batch = 16;
    double lr = 0.01;
    double lr_final = 0.01;   // final lr as a fraction of `lr`, linear decay
    double momentum = 0.937;
    double weight_decay = 5e-4;
    std::size_t warmup = 0;   // iterations of linear lr / momentum warmup
    BoxLossKind box = BoxLossKind::siou;
    std::optional<nn::ActKind> act; // unset: the model kind's default
    double width = 0.25, depth = 0.33;
    std::size_t window = 7;
    std::uint64_t seed = 0;
    std::size_t max_iters = 0; // 0: run every epoch
    bool flip = true;
    std::size_t bn_recalibration = 8; // batches per end-of-epoch BN re-estimate; 0 disables
    unsigned threads = 1;
    std::filesystem::path data, weights, out = "runs";

    // Desk-scale settings for synthetic overfit runs.
    static TrainConfig toy()
    {
        TrainConfig c;
        c.width = 0.125;
        c.img = 128;
        c.window = 2;
        c.batch = 16;
        c.epochs = 75;
        c.max_iters = 300;
        c.lr = 0.02;
        c.warmup = 20;
        c.lr_final = 0.1;
        c.weight_decay = 0;
        c.flip = false;
        return c;
    }
    static TrainConfig paper() { return TrainConfig{}; }

    static TrainConfig profile(std::string_view name)
    {
        if (name == "toy") return toy();
        if (name == "paper") return paper();
        throw Error("unknown profile '" + std::string(name) + "' (expected toy|paper)");
    }

    ModelConfig model_config() const
    {
        ModelConfig m = model == ModelKind::baseline ? ModelConfig::baseline(nc) : ModelConfig::light(nc);
        if (act) m.act = *act;
        m.width = width;
        m.depth = depth;
        m.img = img;
        m.window = window;
        return m;
    }

    void validate() const
    {
        if (nc == 0 || img == 0 || epochs == 0 || batch == 0 || window == 0 || threads == 0)
            throw Error("config: nc, img, epochs, batch, window and threads must be positive");
        if (!(lr > 0) || !(lr_final > 0) || !(width > 0) || !(depth > 0))
            throw Error("config: lr, lr_final, width and depth must be positive");
        if (!(momentum >= 0 && momentum < 1)) throw Error("config: momentum must lie in [0, 1)");
        if (!(weight_decay >= 0)) throw Error("config: weight_decay must be non-negative");
        model_config().validate();
    }

    // Assigns one `key = value` setting.
    void set(const std::string& key, const std::string& value)
    {
        auto num = [&]<class V>(V& dst) {
            const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), dst);
            if (ec != std::errc{} || p != value.data() + value.size())
                throw Error("config: bad value '" + value + "' for " + key);
        };
        if (key == "model") model = parse_model_kind(value);
        else if (key == "nc") num(nc);
        else if (key == "img") num(img);
        else if (key == "epochs") num(epochs);
        else if (key == "batch") num(batch);
        else if (key == "lr") num(lr);
        else if (key == "lr_final") num(lr_final);
        else if (key == "momentum") num(momentum);
        else if (key == "weight_decay") num(weight_decay);
        else if (key == "warmup") num(warmup);
        else if (key == "box") box = parse_box_loss_kind(value);
        else if (key == "act") act = nn::parse_activation(value);
        else if (key == "width") num(width);
        else if (key == "depth") num(depth);
        else if (key == "window") num(window);
        else if (key == "seed") num(seed);
        else if (key == "iters") num(max_iters);
        else if (key == "threads") num(threads);
        else if (key == "bn_recalibration") num(bn_recalibration);
        else if (key == "data") data = value;
        else if (key == "weights") weights = value;
        else if (key == "out") out = value;
        else if (key == "flip") {
            if (value != "0" && value != "1" && value != "true" && value != "false")
                throw Error("config: flip expects true|false");
            flip = value == "1" || value == "true";
        } else
            throw Error("config: unknown key '" + key + "'");
    }
};

// Applies a flat `key = value` file; `#` starts a comment.
inline void apply_config_text(TrainConfig& cfg, std::string_view text, const std::string& source = "<config>")
{
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string line(text.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string{};
            return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        try {
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            throw Error(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path.string());
}

// Inverse of apply_config_text: every key, numbers in shortest round-trip form.
inline void write_config(std::ostream& os, const TrainConfig& c)
{
    auto num = [](auto v) {
        char buf[64];
        const auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    };
    os << "model = " << to_string(c.model) << '\n'
       << "nc = " << c.nc << '\n'
       << "img = " << c.img << '\n'
       << "epochs = " << c.epochs << '\n'
       << "batch = " << c.batch << '\n'
       << "lr = " << num(c.lr) << '\n'
       << "lr_final = " << num(c.lr_final) << '\n'
       << "momentum = " << num(c.momentum) << '\n'
       << "weight_decay = " << num(c.weight_decay) << '\n'
       << "warmup = " << c.warmup << '\n'
       << "box = " << to_string(c.box) << '\n';
    if (c.act) os << "act = " << nn::to_string(*c.act) << '\n';
    os << "width = " << num(c.width) << '\n'
       << "depth = " << num(c.depth) << '\n'
       << "window = " << c.window << '\n'
       << "seed = " << c.seed << '\n'
       << "iters = " << c.max_iters << '\n'
       << "flip = " << (c.flip ? "true" : "false") << '\n'
       << "bn_recalibration = " << c.bn_recalibration << '\n'
       << "threads = " << c.threads << '\n';
    if (!c.data.empty()) os << "data = " << c.data.string() << '\n';
    if (!c.weights.empty()) os << "weights = " << c.weights.string() << '\n';
    os << "out = " << c.out.string() << '\n';
}

// Truth boxes of loaded samples, in the letterboxed pixel frame.
inline std::vector<std::vector<LabelledBox>> truths_of(const std::vector<data::LoadedSample>& samples)
{
    std::vector<std::vector<LabelledBox>> out;
    for (const auto& s : samples) {
        std::vector<LabelledBox> t;
        const auto S = static_cast<double>(s.image.width);
        for (const auto& l : s.labels) t.push_back({l.class_id, l.to_pixels(S, S)});
        out.push_back(std::move(t));
    }
    return out;
}

// Eval-mode detections for every sample, in chunks of `batch`.
template <std::floating_point T>
std::vector<std::vector<Detection>> predict(Detector<T>& model, const std::vector<data::LoadedSample>& samples,
                                            const InferenceOptions& opt, std::size_t batch = 16)
{
    std::vector<std::vector<Detection>> out;
    for (std::size_t i = 0; i < samples.size(); i += batch) {
        std::vector<const data::LoadedSample*> chunk;
        for (std::size_t j = i; j < std::min(i + batch, samples.size()); ++j) chunk.push_back(&samples[j]);
        auto dets = detect(model, data::make_batch<T>(chunk).images, opt);
        for (auto& d : dets) out.push_back(std::move(d));
    }
    return out;
}

// Low confidence floor and looser NMS, as used for mAP scoring.
inline InferenceOptions map_inference_options() { return {0.001, 0.6, 300}; }

template <std::floating_point T>
EvalReport evaluate_model(Detector<T>& model, const std::vector<data::LoadedSample>& samples)
{
    return evaluate_detections(predict(model, samples, map_inference_options()), truths_of(samples),
                               model.config().nc);
}

// Replaces BN running statistics with the plain average of train-mode batch
// statistics over the first `max_batches` batches of `samples`. Running
// averages lag the weights during fast training; this removes the lag.
template <std::floating_point T>
void recalibrate_batchnorm(Detector<T>& model, const std::vector<data::LoadedSample>& samples, std::size_t batch,
                           std::size_t max_batches)
{
    for (std::size_t k = 0; k < max_batches && k * batch < samples.size(); ++k) {
        std::vector<const data::LoadedSample*> chunk;
        for (std::size_t j = k * batch; j < std::min((k + 1) * batch, samples.size()); ++j) chunk.push_back(&samples[j]);
        Graph<T> g(false);
        nn::Context<T> ctx{g, nn::Mode::train, 1.0 / static_cast<double>(k + 1)};
        (void)model.forward(ctx, g.constant(data::make_batch<T>(chunk).images));
    }
}

struct EpochLog {
    std::size_t epoch = 0, iterations = 0;
    LossComponents loss; // mean over the epoch's iterations
    std::optional<double> val_map;
    double lr = 0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::vector<double> loss_trace; // total loss per iteration
    std::size_t iterations = 0;
    std::optional<double> best_map;
};

inline void write_epoch_line(std::ostream& os, const EpochLog& e)
{
    const auto flags = os.flags();
    os << std::fixed << std::setprecision(5) << "epoch " << e.epoch << "  iters " << e.iterations << "  lr " << e.lr
       << "  box " << e.loss.box << "  obj " << e.loss.obj << "  cls " << e.loss.cls << "  total " << e.loss.total
       << "  val_mAP50 ";
    if (e.val_map)
        os << std::setprecision(4) << *e.val_map;
    else
        os << "n/a";
    os << '\n';
    os.flags(flags);
}

// Learning rate and momentum for iteration `it` of `total`.
inline std::pair<double, double> schedule(const TrainConfig& cfg, std::size_t it, std::size_t total)
{
    const double decay_span = static_cast<double>(std::max<std::size_t>(total, 1));
    const double frac = static_cast<double>(it) / decay_span;
    double lr = cfg.lr * ((1 - frac) + frac * cfg.lr_final);
    double mom = cfg.momentum;
    if (it < cfg.warmup) {
        const double w = static_cast<double>(it + 1) / static_cast<double>(cfg.warmup);
        lr *= w;
        mom = 0.8 + (cfg.momentum - 0.8) * w;
        mom = std::min(mom, cfg.momentum);
    }
    return {lr, mom};
}

// SGD training over loaded samples. Deterministic for a given config when
// run single-threaded. When `checkpoint_dir` is set, writes best.ckpt (by
// validation mAP, or final loss without a validation set) and last.ckpt.
template <std::floating_point T>
TrainResult train(Detector<T>& model, const TrainConfig& cfg, const std::vector<data::LoadedSample>& train_set,
                  const std::vector<data::LoadedSample>& val_set, std::ostream* log = nullptr,
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt)
{
    if (train_set.empty()) throw Error("train: training split is empty");
    const std::size_t per_epoch = (train_set.size() + cfg.batch - 1) / cfg.batch;
    std::size_t total = per_epoch * cfg.epochs;
    if (cfg.max_iters > 0) total = std::min(total, cfg.max_iters);

    SgdConfig sc;
    sc.momentum = cfg.momentum;
    sc.weight_decay = cfg.weight_decay;
    Sgd<T> opt(model.named_tensors(), sc);
    LossConfig lc;
    lc.box_kind = cfg.box;
    std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
    if (checkpoint_dir) std::filesystem::create_directories(*checkpoint_dir);

    TrainResult r;
    std::optional<double> best_score;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && r.iterations < total; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog e;
        e.epoch = epoch;
        for (std::size_t b = 0; b < per_epoch && r.iterations < total; ++b) {
            std::vector<const data::LoadedSample*> chunk;
            std::vector<bool> flips;
            // Equal-sized batches: a small remainder batch gives noisy BN
            // statistics and a disproportionate step.
            const std::size_t lo = b * order.size() / per_epoch, hi = (b + 1) * order.size() / per_epoch;
            for (std::size_t j = lo; j < hi; ++j) {
                chunk.push_back(&train_set[order[j]]);
                flips.push_back(cfg.flip && (rng() & 1));
            }
            const auto batch = data::make_batch<T>(chunk, flips);
            const auto [lr, mom] = schedule(cfg, r.iterations, total);
            opt.set_momentum(mom);

            Graph<T> g;
            nn::Context<T> ctx{g, nn::Mode::train};
            auto heads = model.forward(ctx, g.constant(batch.images));
            auto loss = training_loss(heads, batch.targets, model.anchors(), cfg.nc, lc);
            g.backward(loss.total);
            opt.step(lr);

            r.loss_trace.push_back(loss.parts.total);
            e.loss.box += loss.parts.box;
            e.loss.obj += loss.parts.obj;
            e.loss.cls += loss.parts.cls;
            e.loss.total += loss.parts.total;
            e.lr = lr;
            ++e.iterations;
            ++r.iterations;
        }
        const double n = static_cast<double>(std::max<std::size_t>(e.iterations, 1));
        e.loss.box /= n;
        e.loss.obj /= n;
        e.loss.cls /= n;
        e.loss.total /= n;
        if (cfg.bn_recalibration > 0) recalibrate_batchnorm(model, train_set, cfg.batch, cfg.bn_recalibration);
        if (!val_set.empty()) e.val_map = evaluate_model(model, val_set).map50;
        if (log) write_epoch_line(*log, e);

        const double score = e.val_map ? *e.val_map : -e.loss.total;
        if (!best_score || score > *best_score) {
            best_score = score;
            if (e.val_map) r.best_map = e.val_map;
            if (checkpoint_dir) save_checkpoint(model.named_tensors(), *checkpoint_dir / "best.ckpt");
        }
        r.epochs.push_back(e);
    }
    if (checkpoint_dir) save_checkpoint(model.named_tensors(), *checkpoint_dir / "last.ckpt");
    return r;
}

} // namespace lyv5
