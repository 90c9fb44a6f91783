#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "detector.hpp"

namespace lyv5 {

struct PrecisionRecall {
    double precision = 0;
    double recall = 0;
};

// Empty denominators yield 0 rather than NaN.
inline PrecisionRecall precision_recall(std::size_t tp, std::size_t fp, std::size_t fn)
{
    PrecisionRecall pr;
    if (tp + fp > 0) pr.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) pr.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return pr;
}

// Single-class inputs to the matcher.
struct ScoredBox {
    std::size_t image = 0;
    Box box;
    double confidence = 0;
};

struct TruthBox {
    std::size_t image = 0;
    Box box;
};

struct MatchResult {
    // Detections in descending confidence order (stable for ties).
    std::vector<double> confidence;
    std::vector<bool> true_positive;
    std::size_t num_truths = 0;

    std::size_t tp() const { return static_cast<std::size_t>(std::count(true_positive.begin(), true_positive.end(), true)); }
    std::size_t fp() const { return true_positive.size() - tp(); }
    std::size_t fn() const { return num_truths - tp(); }
};

// Greedy matching: detections visited by confidence, each claiming the
// unmatched truth of the same image with the highest IoU >= iou_thresh
// (lowest truth index on ties).
inline MatchResult match_detections(const std::vector<ScoredBox>& dets, const std::vector<TruthBox>& truths,
                                    double iou_thresh = 0.5)
{
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });

    MatchResult m;
    m.num_truths = truths.size();
    std::vector<bool> taken(truths.size(), false);
    for (std::size_t i : order) {
        const auto& d = dets[i];
        std::optional<std::size_t> best;
        double best_iou = iou_thresh;
        for (std::size_t t = 0; t < truths.size(); ++t) {
            if (taken[t] || truths[t].image != d.image) continue;
            const double v = iou(d.box, truths[t].box);
            if (v > best_iou || (v == best_iou && !best)) {
                best = t;
                best_iou = v;
            }
        }
        if (best) taken[*best] = true;
        m.confidence.push_back(d.confidence);
        m.true_positive.push_back(best.has_value());
    }
    return m;
}

struct PrCurve {
    std::vector<double> recall;     // nondecreasing
    std::vector<double> precision;
    std::vector<double> threshold;  // confidence of the detection that closes each point
    double ap = 0;
    bool skipped = false;           // no truths: AP undefined
};

// All-points interpolated area under the precision envelope.
inline PrCurve pr_curve(const MatchResult& m)
{
    PrCurve c;
    if (m.num_truths == 0) {
        c.skipped = true;
        return c;
    }
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < m.true_positive.size(); ++i) {
        (m.true_positive[i] ? tp : fp)++;
        const auto pr = precision_recall(tp, fp, m.num_truths - tp);
        c.recall.push_back(pr.recall);
        c.precision.push_back(pr.precision);
        c.threshold.push_back(m.confidence[i]);
    }
    std::vector<double> envelope(c.precision);
    for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
    double prev_recall = 0;
    for (std::size_t i = 0; i < envelope.size(); ++i) {
        c.ap += (c.recall[i] - prev_recall) * envelope[i];
        prev_recall = c.recall[i];
    }
    return c;
}

inline PrCurve average_precision(const std::vector<ScoredBox>& dets, const std::vector<TruthBox>& truths,
                                 double iou_thresh = 0.5)
{
    return pr_curve(match_detections(dets, truths, iou_thresh));
}

// Unweighted mean over classes that have truths.
inline double map50(const std::vector<PrCurve>& per_class)
{
    double sum = 0;
    std::size_t n = 0;
    for (const auto& c : per_class) {
        if (c.skipped) continue;
        sum += c.ap;
        ++n;
    }
    if (n == 0) throw Error("mAP: no class has ground truth");
    return sum / static_cast<double>(n);
}

struct ClassMetrics {
    std::size_t class_id = 0;
    std::size_t truths = 0, detections = 0;
    PrCurve curve;
    // Operating point with the best F1 along the curve.
    double precision = 0, recall = 0, f1 = 0, threshold = 0;
};

struct EvalReport {
    std::vector<ClassMetrics> classes;
    double map50 = 0;
};

// Labelled box in input pixels, as consumed by the evaluator.
struct LabelledBox {
    std::size_t class_id = 0;
    Box box;
};

inline EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                                      const std::vector<std::vector<LabelledBox>>& truths, std::size_t nc,
                                      double iou_thresh = 0.5)
{
    if (dets.size() != truths.size()) throw Error("evaluate: detection and truth image counts differ");
    EvalReport r;
    std::vector<PrCurve> curves;
    for (std::size_t c = 0; c < nc; ++c) {
        std::vector<ScoredBox> sd;
        std::vector<TruthBox> st;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            for (const auto& d : dets[i])
                if (d.class_id == c) sd.push_back({i, d.box, d.confidence});
            for (const auto& t : truths[i]) {
                if (t.class_id >= nc) throw Error("evaluate: truth class " + std::to_string(t.class_id) + " >= nc");
                if (t.class_id == c) st.push_back({i, t.box});
            }
        }
        ClassMetrics cm;
        cm.class_id = c;
        cm.truths = st.size();
        cm.detections = sd.size();
        cm.curve = average_precision(sd, st, iou_thresh);
        for (std::size_t k = 0; k < cm.curve.recall.size(); ++k) {
            const double p = cm.curve.precision[k], rc = cm.curve.recall[k];
            const double f1 = p + rc > 0 ? 2 * p * rc / (p + rc) : 0;
            if (f1 > cm.f1) {
                cm.f1 = f1;
                cm.precision = p;
                cm.recall = rc;
                cm.threshold = cm.curve.threshold[k];
            }
        }
        curves.push_back(cm.curve);
        r.classes.push_back(std::move(cm));
    }
    r.map50 = map50(curves);
    return r;
}

inline void write_report(std::ostream& os, const EvalReport& r)
{
    const auto flags = os.flags();
    os << std::fixed << std::setprecision(4);
    os << "class\ttruths\tdetections\tAP50\tP\tR\tF1\tconf\n";
    for (const auto& c : r.classes) {
        os << c.class_id << '\t' << c.truths << '\t' << c.detections << '\t';
        if (c.curve.skipped)
            os << "skipped";
        else
            os << c.curve.ap;
        os << '\t' << c.precision << '\t' << c.recall << '\t' << c.f1 << '\t' << c.threshold << '\n';
    }
    os << "mAP50\t" << r.map50 << '\n';
    os.flags(flags);
}

struct BenchResult {
    std::vector<double> latency_ms;
    double mean_ms = 0, p95_ms = 0, fps = 0;
};

// Times `run` n times after `warmup` untimed calls.
inline BenchResult fps_bench(const std::function<void()>& run, std::size_t n, std::size_t warmup = 2)
{
    if (n == 0) throw Error("bench: need at least one timed run");
    for (std::size_t i = 0; i < warmup; ++i) run();
    BenchResult b;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        run();
        const auto t1 = std::chrono::steady_clock::now();
        b.latency_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    b.mean_ms = std::accumulate(b.latency_ms.begin(), b.latency_ms.end(), 0.0) / static_cast<double>(n);
    auto sorted = b.latency_ms;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    b.p95_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
    b.fps = 1000.0 / std::max(b.mean_ms, 1e-9);
    return b;
}

// Batch-1 forward plus NMS on a fixed random image of side `img`.
template <std::floating_point T>
BenchResult bench_detector(Detector<T>& model, std::size_t img, std::size_t n, std::size_t warmup = 2,
                           const InferenceOptions& opt = {})
{
    std::mt19937_64 rng(0);
    const auto x = Tensor<T>::uniform({1, 3, img, img}, T(0), T(1), rng);
    return fps_bench([&] { (void)detect(model, x, opt); }, n, warmup);
}

} // namespace lyv5
