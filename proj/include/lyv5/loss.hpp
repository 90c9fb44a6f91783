#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "detector.hpp"

namespace lyv5 {

// One labelled object, in input pixels, belonging to image `image` of the batch.
struct GroundTruth {
    std::size_t image = 0;
    std::size_t class_id = 0;
    Box box;
};

struct LossConfig {
    BoxLossKind box_kind = BoxLossKind::siou;
    BoxLossOptions box_options;
    double lambda_box = 0.05;
    double lambda_obj = 1.0;
    double lambda_cls = 0.5;
    double anchor_threshold = 4.0;
    // Objectness target = (1 - r) + r * IoU of the matched prediction.
    double objectness_iou_ratio = 1.0;
    std::array<double, kNumLevels> balance{4.0, 1.0, 0.4};
};

// A target placed on one (image, anchor, cell) of a level. Box in grid units
// relative to the cell's top-left corner.
struct Assignment {
    std::size_t image = 0, anchor = 0, gx = 0, gy = 0, class_id = 0;
    std::array<double, 4> box{};
    std::array<double, 2> anchor_wh{};
};

// Matches each target to every anchor whose side ratios stay below the
// threshold, then places it in its own cell and the two nearest neighbours.
inline std::vector<Assignment> build_targets(const std::vector<GroundTruth>& gts, std::size_t level, std::size_t grid_h,
                                             std::size_t grid_w, const AnchorSet& anchors, double anchor_threshold)
{
    const double stride = static_cast<double>(kStrides.at(level));
    std::vector<Assignment> out;
    for (const auto& gt : gts) {
        const double gx = gt.box.cx / stride, gy = gt.box.cy / stride;
        const double gw = gt.box.w / stride, gh = gt.box.h / stride;
        if (!(gw > 0) || !(gh > 0)) continue;
        const double fx = gx - std::floor(gx), fy = gy - std::floor(gy);
        const double ix = static_cast<double>(grid_w) - gx, iy = static_cast<double>(grid_h) - gy;
        const double fix = ix - std::floor(ix), fiy = iy - std::floor(iy);
        std::vector<std::array<double, 2>> offsets{{0, 0}};
        if (fx < 0.5 && gx > 1) offsets.push_back({0.5, 0});
        if (fy < 0.5 && gy > 1) offsets.push_back({0, 0.5});
        if (fix < 0.5 && ix > 1) offsets.push_back({-0.5, 0});
        if (fiy < 0.5 && iy > 1) offsets.push_back({0, -0.5});

        for (std::size_t a = 0; a < kAnchorsPerLevel; ++a) {
            const double aw = anchors.wh[level][a][0] / stride, ah = anchors.wh[level][a][1] / stride;
            const double rw = gw / aw, rh = gh / ah;
            if (std::max({rw, 1 / rw, rh, 1 / rh}) >= anchor_threshold) continue;
            for (const auto& o : offsets) {
                const auto cx = static_cast<long>(std::floor(gx - o[0])), cy = static_cast<long>(std::floor(gy - o[1]));
                const auto cgx = static_cast<std::size_t>(std::clamp<long>(cx, 0, static_cast<long>(grid_w) - 1));
                const auto cgy = static_cast<std::size_t>(std::clamp<long>(cy, 0, static_cast<long>(grid_h) - 1));
                Assignment as;
                as.image = gt.image;
                as.anchor = a;
                as.gx = cgx;
                as.gy = cgy;
                as.class_id = gt.class_id;
                as.box = {gx - static_cast<double>(cgx), gy - static_cast<double>(cgy), gw, gh};
                as.anchor_wh = {aw, ah};
                out.push_back(as);
            }
        }
    }
    return out;
}

// Mean binary cross-entropy over logits `x` against constant targets.
template <std::floating_point T>
Var<T> bce_with_logits(const Var<T>& x, const Tensor<T>& target)
{
    if (x.shape() != target.shape())
        throw ShapeError("bce: logits " + to_string(x.shape()) + " vs targets " + to_string(target.shape()));
    auto& g = x.graph();
    const auto xv = x.value();
    long double acc = 0;
    auto xs = xv.data();
    auto ts = target.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double v = xs[i], t = ts[i];
        acc += std::max(v, 0.0) - v * t + std::log1p(std::exp(-std::abs(v)));
    }
    const T n = static_cast<T>(std::max<std::size_t>(xs.size(), 1));
    return g.record("bce", Tensor<T>::scalar(static_cast<T>(acc / n)), {x}, [xv, target, n](Node<T>& self) {
        auto ga = input_grad(self, 0);
        if (ga.empty()) return;
        const T gy = self.value.grad()[0] / n;
        auto xs = xv.data();
        auto ts = target.data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy * (sigmoid_scalar(xs[i]) - ts[i]);
    });
}

struct LossComponents {
    double box = 0, obj = 0, cls = 0, total = 0;
};

template <std::floating_point T>
struct LossResult {
    Var<T> total;
    LossComponents parts;
};

// Weighted box + objectness + class loss over the three head maps, scaled by
// batch size. Objectness targets use the detached IoU of the matched boxes.
template <std::floating_point T>
LossResult<T> training_loss(const std::vector<Var<T>>& heads, const std::vector<GroundTruth>& gts,
                            const AnchorSet& anchors, std::size_t nc, const LossConfig& cfg = {})
{
    if (heads.size() != kNumLevels) throw ShapeError("training_loss: expected 3 head maps");
    auto& g = heads[0].graph();
    const std::size_t no = 5 + nc;
    const std::size_t batch = heads[0].dim(0);
    for (const auto& gt : gts) {
        if (gt.image >= batch) throw Error("training_loss: target refers to image outside the batch");
        if (gt.class_id >= nc) throw Error("training_loss: class id out of range");
    }

    std::vector<Var<T>> box_terms, obj_terms, cls_terms;
    LossComponents parts;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        const auto& p = heads[l];
        if (p.rank() != 4 || p.dim(0) != batch || p.dim(1) != kAnchorsPerLevel * no)
            throw ShapeError("training_loss: head " + std::to_string(l) + " has shape " + to_string(p.shape()));
        const std::size_t H = p.dim(2), W = p.dim(3);
        auto at = [&](std::size_t n, std::size_t a, std::size_t k, std::size_t y, std::size_t x) {
            return (((n * kAnchorsPerLevel + a) * no + k) * H + y) * W + x;
        };

        Tensor<T> tobj({batch, kAnchorsPerLevel, H, W});
        const auto assigned = build_targets(gts, l, H, W, anchors, cfg.anchor_threshold);
        const std::size_t m = assigned.size();
        if (m > 0) {
            auto idx = std::make_shared<std::vector<std::size_t>>(m * no);
            Tensor<T> tbox({m, 4}), awh({m, 2});
            for (std::size_t i = 0; i < m; ++i) {
                const auto& as = assigned[i];
                for (std::size_t k = 0; k < no; ++k) (*idx)[i * no + k] = at(as.image, as.anchor, k, as.gy, as.gx);
                for (std::size_t k = 0; k < 4; ++k) tbox.data_mut()[i * 4 + k] = static_cast<T>(as.box[k]);
                awh.data_mut()[i * 2] = static_cast<T>(as.anchor_wh[0]);
                awh.data_mut()[i * 2 + 1] = static_cast<T>(as.anchor_wh[1]);
            }
            auto ps = gather(p, Shape{m, no}, idx, "select_cells");
            auto pxy = sigmoid(slice(ps, 1, 0, 2)) * T(2) - T(0.5);
            auto pwh = square(sigmoid(slice(ps, 1, 2, 2)) * T(2)) * g.constant(awh);
            Tensor<T> ious;
            auto rows = box_loss_rows(cfg.box_kind, concat<T>({pxy, pwh}, 1), tbox, &ious, cfg.box_options);
            box_terms.push_back(mean(rows));
            for (std::size_t i = 0; i < m; ++i) {
                const auto& as = assigned[i];
                tobj.data_mut()[((as.image * kAnchorsPerLevel + as.anchor) * H + as.gy) * W + as.gx] =
                    static_cast<T>((1 - cfg.objectness_iou_ratio)
                                   + cfg.objectness_iou_ratio * std::max(static_cast<double>(ious[i]), 0.0));
            }
            if (nc > 1) {
                Tensor<T> tcls({m, nc});
                for (std::size_t i = 0; i < m; ++i) tcls.data_mut()[i * nc + assigned[i].class_id] = T(1);
                cls_terms.push_back(bce_with_logits(slice(ps, 1, 5, nc), tcls));
            }
        }

        auto oidx = std::make_shared<std::vector<std::size_t>>(batch * kAnchorsPerLevel * H * W);
        std::size_t j = 0;
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t a = 0; a < kAnchorsPerLevel; ++a)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) (*oidx)[j++] = at(n, a, 4, y, x);
        auto pobj = gather(p, Shape{batch, kAnchorsPerLevel, H, W}, oidx, "select_objectness");
        obj_terms.push_back(bce_with_logits(pobj, tobj) * static_cast<T>(cfg.balance[l]));
    }

    auto weighted_sum = [&](const std::vector<Var<T>>& terms, double gain, double& report) -> std::optional<Var<T>> {
        if (terms.empty()) return std::nullopt;
        Var<T> s = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) s = s + terms[i];
        s = s * static_cast<T>(gain);
        report = static_cast<double>(s.item());
        return s;
    };
    const auto lbox = weighted_sum(box_terms, cfg.lambda_box, parts.box);
    const auto lobj = weighted_sum(obj_terms, cfg.lambda_obj, parts.obj);
    const auto lcls = weighted_sum(cls_terms, cfg.lambda_cls, parts.cls);
    Var<T> total = *lobj;
    if (lbox) total = total + *lbox;
    if (lcls) total = total + *lcls;
    total = total * static_cast<T>(batch);
    parts.total = static_cast<double>(total.item());
    return {total, parts};
}

} // namespace lyv5
