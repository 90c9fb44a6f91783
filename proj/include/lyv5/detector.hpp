#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bifpn.hpp"
#include "box.hpp"

namespace lyv5 {

enum class ModelKind { baseline, light };

inline std::string to_string(ModelKind k) { return k == ModelKind::baseline ? "baseline" : "light"; }

inline ModelKind parse_model_kind(std::string_view s)
{
    if (s == "baseline") return ModelKind::baseline;
    if (s == "light") return ModelKind::light;
    throw Error("unknown model '" + std::string(s) + "' (expected baseline|light)");
}

inline constexpr std::size_t kNumLevels = 3;
inline constexpr std::size_t kAnchorsPerLevel = 3;
inline constexpr std::array<std::size_t, kNumLevels> kStrides{8, 16, 32};

// Three anchors per level, (w, h) in input pixels, ascending area.
struct AnchorSet {
    std::array<std::array<std::array<double, 2>, kAnchorsPerLevel>, kNumLevels> wh{};

    // The v5 default priors, defined at 640 px, rescaled to `img`.
    static AnchorSet for_input(std::size_t img)
    {
        static constexpr double base[kNumLevels][kAnchorsPerLevel][2] = {
            {{10, 13}, {16, 30}, {33, 23}}, {{30, 61}, {62, 45}, {59, 119}}, {{116, 90}, {156, 198}, {373, 326}}};
        const double k = static_cast<double>(img) / 640.0;
        AnchorSet a;
        for (std::size_t l = 0; l < kNumLevels; ++l)
            for (std::size_t i = 0; i < kAnchorsPerLevel; ++i) a.wh[l][i] = {base[l][i][0] * k, base[l][i][1] * k};
        return a;
    }
};

struct ModelConfig {
    ModelKind kind = ModelKind::light;
    std::size_t nc = 2;
    double width = 0.25;
    double depth = 0.33;
    nn::ActKind act = nn::ActKind::mish();
    std::size_t img = 448;          // training size; anchors are scaled to it
    std::size_t window = 7;         // SepViT window size
    std::size_t gam_reduction = 8;

    static ModelConfig baseline(std::size_t nc = 2)
    {
        ModelConfig c;
        c.kind = ModelKind::baseline;
        c.nc = nc;
        c.act = nn::ActKind::silu();
        return c;
    }
    static ModelConfig light(std::size_t nc = 2)
    {
        ModelConfig c;
        c.nc = nc;
        return c;
    }

    std::size_t outputs_per_anchor() const { return 5 + nc; }
    std::size_t repeats(std::size_t n) const
    {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) * depth)));
    }
    std::size_t channels(std::size_t base) const { return make_divisible(static_cast<double>(base) * width); }

    void validate() const
    {
        if (nc == 0) throw Error("model: class count must be at least 1");
        if (!(width > 0) || !(depth > 0)) throw Error("model: width and depth multiples must be positive");
        if (img == 0 || img % 32) throw Error("model: input size must be a positive multiple of 32");
        if (window == 0) throw Error("model: window size must be positive");
    }
};

struct CostReport {
    std::vector<nn::LayerReport> layers;
    nn::LayerCost total;
};

// One detected object in input-pixel coordinates.
struct Detection {
    Box box;
    std::size_t class_id = 0;
    double confidence = 0;
};

template <std::floating_point T>
class Detector {
public:
    Detector(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), anchors_(AnchorSet::for_input(cfg.img))
    {
        cfg.validate();
        build(rng);
    }

    Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), anchors_(AnchorSet::for_input(cfg.img))
    {
        cfg.validate();
        std::mt19937_64 rng(seed);
        build(rng);
    }

    // Raw head maps, one per stride, shaped (N, 3 * (5 + nc), H / s, W / s).
    std::vector<Var<T>> forward(nn::Context<T>& ctx, const Var<T>& images)
    {
        check_input(images.shape());
        return net_.forward(ctx, {images});
    }

    const ModelConfig& config() const { return cfg_; }
    const AnchorSet& anchors() const { return anchors_; }
    nn::Network<T>& network() { return net_; }
    const nn::Network<T>& network() const { return net_; }
    nn::TensorList<T> named_tensors() { return net_.named_tensors(); }
    std::array<int, kNumLevels> head_layers() const { return heads_; }

    CostReport cost(std::size_t img = 640) const
    {
        CostReport r;
        r.layers = net_.report({Shape{1, 3, img, img}});
        for (const auto& l : r.layers) r.total += l.cost;
        return r;
    }

    static void check_input(const Shape& s)
    {
        if (s.size() != 4 || s[1] != 3 || s[2] == 0 || s[3] == 0 || s[2] % 32 || s[3] % 32)
            throw ShapeError("detector: expected (N, 3, H, W) with H, W positive multiples of 32, got " + to_string(s));
    }

private:
    void build(std::mt19937_64& rng)
    {
        const auto& c = cfg_;
        const auto act = c.act;
        auto conv = [&](std::size_t ci, std::size_t co, std::size_t k, std::size_t s) {
            return std::make_unique<ConvLayer<T>>(nn::ConvSpec::block(ci, co, k, s, act), rng);
        };
        auto c3 = [&](std::size_t ci, std::size_t co, std::size_t n, bool shortcut) {
            C3Spec s;
            s.in_channels = ci;
            s.out_channels = co;
            s.repeats = n;
            s.shortcut = shortcut;
            return std::make_unique<C3<T>>(s, act, rng);
        };

        // Backbone: 6x6 stem and four stride-2 stages.
        auto stem = nn::ConvSpec::block(3, c.channels(64), 6, 2, act);
        stem.padding = 2;
        net_.add({0}, std::make_unique<ConvLayer<T>>(stem, rng));
        net_.add({-1}, conv(c.channels(64), c.channels(128), 3, 2));
        net_.add({-1}, c3(c.channels(128), c.channels(128), c.repeats(3), true));
        net_.add({-1}, conv(c.channels(128), c.channels(256), 3, 2));
        const int p3 = net_.add({-1}, c3(c.channels(256), c.channels(256), c.repeats(6), true));
        net_.add({-1}, conv(c.channels(256), c.channels(512), 3, 2));
        const int p4 = net_.add({-1}, c3(c.channels(512), c.channels(512), c.repeats(9), true));
        net_.add({-1}, conv(c.channels(512), c.channels(1024), 3, 2));
        if (c.kind == ModelKind::light)
            net_.add({-1}, std::make_unique<C3SepVit<T>>(c.channels(1024), c.channels(1024), c.window, act, rng));
        else
            net_.add({-1}, c3(c.channels(1024), c.channels(1024), c.repeats(3), true));
        const int p5 = net_.add({-1}, std::make_unique<Sppf<T>>(c.channels(1024), c.channels(1024), act, rng));

        std::array<int, kNumLevels> feats{};
        std::array<std::size_t, kNumLevels> widths{};
        if (c.kind == ModelKind::light) {
            BifpnOptions opt;
            opt.widths = BifpnWidths::scaled(c.width);
            opt.act = act;
            opt.repeats = c.repeats(3);
            opt.gam_reduction = c.gam_reduction;
            const auto out = append_light_bifpn(net_, {p3, p4, p5}, opt, rng);
            feats = {out.p3, out.p4, out.p5};
            widths = {opt.widths.out3, opt.widths.out4, opt.widths.out5};
        } else {
            // PANet: top-down then bottom-up, concatenation fusion.
            const int lat5 = net_.add({p5}, conv(c.channels(1024), c.channels(512), 1, 1));
            net_.add({-1}, std::make_unique<Upsample<T>>());
            net_.add({-1, p4}, std::make_unique<Concat<T>>());
            net_.add({-1}, c3(c.channels(1024), c.channels(512), c.repeats(3), false));
            const int lat4 = net_.add({-1}, conv(c.channels(512), c.channels(256), 1, 1));
            net_.add({-1}, std::make_unique<Upsample<T>>());
            net_.add({-1, p3}, std::make_unique<Concat<T>>());
            const int out3 = net_.add({-1}, c3(c.channels(512), c.channels(256), c.repeats(3), false));
            net_.add({-1}, conv(c.channels(256), c.channels(256), 3, 2));
            net_.add({-1, lat4}, std::make_unique<Concat<T>>());
            const int out4 = net_.add({-1}, c3(c.channels(512), c.channels(512), c.repeats(3), false));
            net_.add({-1}, conv(c.channels(512), c.channels(512), 3, 2));
            net_.add({-1, lat5}, std::make_unique<Concat<T>>());
            const int out5 = net_.add({-1}, c3(c.channels(1024), c.channels(1024), c.repeats(3), false));
            feats = {out3, out4, out5};
            widths = {c.channels(256), c.channels(512), c.channels(1024)};
        }

        const std::size_t no = c.outputs_per_anchor();
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            nn::ConvSpec h;
            h.in_channels = widths[l];
            h.out_channels = kAnchorsPerLevel * no;
            h.kernel = 1;
            h.has_bias = true;
            h.with_batchnorm = false;
            h.activation = nn::ActKind::identity();
            auto layer = std::make_unique<ConvLayer<T>>(h, rng);
            // Prior: about 8 objects per 640 image at each level, classes near-uniform.
            auto bias = layer->conv().bias->data_mut();
            const double cells = std::pow(640.0 / static_cast<double>(kStrides[l]), 2);
            for (std::size_t a = 0; a < kAnchorsPerLevel; ++a) {
                bias[a * no + 4] += static_cast<T>(std::log(8.0 / cells));
                for (std::size_t k = 5; k < no; ++k)
                    bias[a * no + k] += static_cast<T>(std::log(0.6 / (static_cast<double>(c.nc) - 0.99)));
            }
            heads_[l] = net_.add({feats[l]}, std::move(layer));
        }
        net_.set_outputs({heads_[0], heads_[1], heads_[2]});
    }

    ModelConfig cfg_;
    AnchorSet anchors_;
    nn::Network<T> net_{1};
    std::array<int, kNumLevels> heads_{};
};

template <std::floating_point T>
Detector<T> build_yolov5n_baseline(std::size_t nc, std::uint64_t seed = 0, std::size_t img = 448)
{
    auto c = ModelConfig::baseline(nc);
    c.img = img;
    return Detector<T>(c, seed);
}

template <std::floating_point T>
Detector<T> build_light_yolov5(std::size_t nc, std::uint64_t seed = 0, std::size_t img = 448)
{
    auto c = ModelConfig::light(nc);
    c.img = img;
    return Detector<T>(c, seed);
}

// Human-readable layer table with per-layer cost.
inline void write_model_table(std::ostream& os, const CostReport& r)
{
    os << std::left << std::setw(4) << "#" << std::setw(10) << "from" << std::setw(12) << "module" << std::setw(26)
       << "args" << std::setw(22) << "output" << std::right << std::setw(11) << "params" << std::setw(14) << "MFLOPs"
       << '\n';
    for (const auto& l : r.layers) {
        os << std::left << std::setw(4) << l.index << std::setw(10) << l.from << std::setw(12) << l.kind
           << std::setw(26) << l.args << std::setw(22) << to_string(l.out) << std::right << std::setw(11)
           << l.cost.params << std::setw(14) << std::fixed << std::setprecision(2)
           << static_cast<double>(l.cost.flops) / 1e6 << '\n';
    }
    os << "total: " << r.total.params << " params, " << std::setprecision(3)
       << static_cast<double>(r.total.flops) / 1e9 << " GFLOPs\n";
    os.unsetf(std::ios::fixed);
}

// ---- head decoding ----

template <std::floating_point T>
T logit(T p)
{
    return std::log(p / (T(1) - p));
}

// Box encoded by one anchor at grid cell (gx, gy) of a level with `stride`,
// given the four raw box logits.
inline Box decode_cell(const double raw[4], double stride, const std::array<double, 2>& anchor, std::size_t gx,
                       std::size_t gy)
{
    const double sx = sigmoid_scalar(raw[0]), sy = sigmoid_scalar(raw[1]);
    const double sw = sigmoid_scalar(raw[2]), sh = sigmoid_scalar(raw[3]);
    return {(2 * sx - 0.5 + static_cast<double>(gx)) * stride, (2 * sy - 0.5 + static_cast<double>(gy)) * stride,
            4 * sw * sw * anchor[0], 4 * sh * sh * anchor[1]};
}

// Inverse of decode_cell. The box center must lie within (-0.5, 1.5) cells
// of (gx, gy) and each side within (0, 4) anchor lengths.
inline std::array<double, 4> encode_cell(const Box& b, double stride, const std::array<double, 2>& anchor,
                                         std::size_t gx, std::size_t gy)
{
    const double px = (b.cx / stride - static_cast<double>(gx) + 0.5) / 2;
    const double py = (b.cy / stride - static_cast<double>(gy) + 0.5) / 2;
    const double pw = std::sqrt(b.w / anchor[0]) / 2, ph = std::sqrt(b.h / anchor[1]) / 2;
    for (double p : {px, py, pw, ph})
        if (!(p > 0 && p < 1)) throw Error("encode_cell: box not representable from this cell and anchor");
    return {logit(px), logit(py), logit(pw), logit(ph)};
}

inline Box clamp_box(const Box& b, double width, double height)
{
    const double x1 = std::clamp(b.x1(), 0.0, width), x2 = std::clamp(b.x2(), 0.0, width);
    const double y1 = std::clamp(b.y1(), 0.0, height), y2 = std::clamp(b.y2(), 0.0, height);
    return Box::from_corners(x1, y1, x2, y2);
}

// Per-image detections with confidence = objectness * best class
// probability above `conf_thresh`, optionally clamped to the image.
template <std::floating_point T>
std::vector<std::vector<Detection>> decode_heads(const std::vector<Tensor<T>>& heads, const AnchorSet& anchors,
                                                 std::size_t nc, std::size_t img_h, std::size_t img_w,
                                                 double conf_thresh, bool clamp = true)
{
    if (heads.size() != kNumLevels) throw ShapeError("decode: expected 3 head maps");
    const std::size_t no = 5 + nc;
    const std::size_t batch = heads[0].dim(0);
    std::vector<std::vector<Detection>> out(batch);
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        const auto& h = heads[l];
        const std::size_t H = h.dim(2), W = h.dim(3), hw = H * W;
        if (h.rank() != 4 || h.dim(1) != kAnchorsPerLevel * no || h.dim(0) != batch
            || H * kStrides[l] != img_h || W * kStrides[l] != img_w)
            throw ShapeError("decode: head " + std::to_string(l) + " has shape " + to_string(h.shape()));
        auto d = h.data();
        const double stride = static_cast<double>(kStrides[l]);
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t a = 0; a < kAnchorsPerLevel; ++a) {
                const T* base = d.data() + (n * kAnchorsPerLevel * no + a * no) * hw;
                for (std::size_t cell = 0; cell < hw; ++cell) {
                    const double obj = sigmoid_scalar(static_cast<double>(base[4 * hw + cell]));
                    if (obj <= conf_thresh) continue;
                    std::size_t best = 0;
                    double best_p = -1;
                    for (std::size_t k = 0; k < nc; ++k) {
                        const double p = sigmoid_scalar(static_cast<double>(base[(5 + k) * hw + cell]));
                        if (p > best_p) best_p = p, best = k;
                    }
                    const double conf = obj * best_p;
                    if (conf <= conf_thresh) continue;
                    const double raw[4] = {static_cast<double>(base[cell]), static_cast<double>(base[hw + cell]),
                                           static_cast<double>(base[2 * hw + cell]),
                                           static_cast<double>(base[3 * hw + cell])};
                    const Box b = decode_cell(raw, stride, anchors.wh[l][a], cell % W, cell / W);
                    out[n].push_back(
                        {clamp ? clamp_box(b, static_cast<double>(img_w), static_cast<double>(img_h)) : b, best, conf});
                }
            }
    }
    return out;
}

// Greedy per-class suppression; the result is sorted by confidence, highest first.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, double conf_thresh,
                                  std::size_t max_det = 300)
{
    std::erase_if(dets, [&](const Detection& d) { return d.confidence < conf_thresh; });
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (k.class_id == d.class_id && overlap(k.box, d.box).iou > iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) {
            kept.push_back(d);
            if (kept.size() == max_det) break;
        }
    }
    return kept;
}

struct InferenceOptions {
    double conf_thresh = 0.25;
    double iou_thresh = 0.45;
    std::size_t max_det = 300;
};

// Eval-mode forward, decode and suppression for a batch of images.
template <std::floating_point T>
std::vector<std::vector<Detection>> detect(Detector<T>& model, const Tensor<T>& images, const InferenceOptions& opt = {})
{
    Graph<T> g(false);
    nn::Context<T> ctx{g, nn::Mode::eval};
    auto heads = model.forward(ctx, g.constant(images));
    std::vector<Tensor<T>> maps;
    for (auto& h : heads) maps.push_back(h.value());
    auto per_image = decode_heads(maps, model.anchors(), model.config().nc, images.dim(2), images.dim(3), opt.conf_thresh);
    for (auto& d : per_image) d = nms(std::move(d), opt.iou_thresh, opt.conf_thresh, opt.max_det);
    return per_image;
}

} // namespace lyv5
