#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "autograd.hpp"
#include "dual.hpp"

namespace lyv5 {

// Axis-aligned box in center form. S is a float type or a Dual.
template <class S>
struct BasicBox {
    S cx{}, cy{}, w{}, h{};

    S x1() const { return cx - w * S(0.5); }
    S y1() const { return cy - h * S(0.5); }
    S x2() const { return cx + w * S(0.5); }
    S y2() const { return cy + h * S(0.5); }
    S area() const { return w * h; }

    static BasicBox from_corners(S x1, S y1, S x2, S y2)
    {
        return {(x1 + x2) * S(0.5), (y1 + y2) * S(0.5), x2 - x1, y2 - y1};
    }
};

using Box = BasicBox<double>;

enum class BoxLossKind { iou, giou, diou, ciou, eiou, siou };

inline constexpr BoxLossKind kAllBoxLossKinds[] = {BoxLossKind::iou,  BoxLossKind::giou, BoxLossKind::diou,
                                                   BoxLossKind::ciou, BoxLossKind::eiou, BoxLossKind::siou};

inline std::string to_string(BoxLossKind k)
{
    switch (k) {
    case BoxLossKind::iou: return "IoU";
    case BoxLossKind::giou: return "GIoU";
    case BoxLossKind::diou: return "DIoU";
    case BoxLossKind::ciou: return "CIoU";
    case BoxLossKind::eiou: return "EIoU";
    case BoxLossKind::siou: return "SIoU";
    }
    return "?";
}

inline BoxLossKind parse_box_loss_kind(std::string_view s)
{
    std::string lower(s);
    std::ranges::transform(lower, lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (auto k : kAllBoxLossKinds) {
        auto name = to_string(k);
        std::ranges::transform(name, name.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (name == lower) return k;
    }
    throw Error("unknown box loss '" + std::string(s) + "' (expected iou|giou|diou|ciou|eiou|siou)");
}

struct BoxLossOptions {
    // Squared normalized center offsets in the SIoU distance cost. The
    // unsquared form is kept for comparison runs.
    bool siou_squared_offsets = true;
    double siou_theta = 4.0;
    double eps = 1e-9;
};

template <class S>
void require_valid(const BasicBox<S>& b, const char* who)
{
    if (!(value_of(b.w) >= 0) || !(value_of(b.h) >= 0))
        throw Error(std::string(who) + ": negative or NaN box extent (w=" + std::to_string(value_of(b.w))
                    + ", h=" + std::to_string(value_of(b.h)) + ")");
}

template <class S>
struct EnclosureGeometry {
    BasicBox<S> box;  // minimum enclosing box
    S cw, ch;         // its width and height
    S diag2;          // cw^2 + ch^2
    S center_dist2;   // squared distance between the two centers
};

template <class S>
EnclosureGeometry<S> enclosure(const BasicBox<S>& a, const BasicBox<S>& b)
{
    using std::max;
    using std::min;
    const S x1 = min(a.x1(), b.x1()), y1 = min(a.y1(), b.y1());
    const S x2 = max(a.x2(), b.x2()), y2 = max(a.y2(), b.y2());
    const S cw = x2 - x1, ch = y2 - y1;
    const S dx = a.cx - b.cx, dy = a.cy - b.cy;
    return {BasicBox<S>::from_corners(x1, y1, x2, y2), cw, ch, cw * cw + ch * ch, dx * dx + dy * dy};
}

template <class S>
struct Overlap {
    S inter, uni, iou;
};

template <class S>
Overlap<S> overlap(const BasicBox<S>& a, const BasicBox<S>& b)
{
    using std::max;
    using std::min;
    const S iw = max(min(a.x2(), b.x2()) - max(a.x1(), b.x1()), S(0));
    const S ih = max(min(a.y2(), b.y2()) - max(a.y1(), b.y1()), S(0));
    const S inter = iw * ih;
    const S uni = a.area() + b.area() - inter;
    if (!(value_of(uni) > 0)) return {inter, uni, S(0)};
    return {inter, uni, inter / uni};
}

template <class S>
S iou(const BasicBox<S>& a, const BasicBox<S>& b)
{
    require_valid(a, "iou");
    require_valid(b, "iou");
    return overlap(a, b).iou;
}

template <class S>
S safe_ratio(const S& num, const S& den)
{
    return value_of(den) > 0 ? num / den : S(0);
}

template <class S>
struct SiouTerms {
    S iou;
    S angle;    // Lambda
    S distance; // Delta
    S shape;    // Omega
};

template <class S>
SiouTerms<S> siou_terms(const BasicBox<S>& pred, const BasicBox<S>& gt, const BoxLossOptions& opt = {})
{
    using std::abs;
    using std::exp;
    using std::max;
    using std::sqrt;
    const auto ov = overlap(pred, gt);
    const auto enc = enclosure(pred, gt);

    const S dx = gt.cx - pred.cx, dy = gt.cy - pred.cy;
    const S sigma2 = dx * dx + dy * dy;
    const S sigma = value_of(sigma2) > 0 ? sqrt(sigma2) : S(0);
    const S guard = sigma + S(opt.eps);
    // sin(a) = |dy| / sigma, cos(a) = |dx| / sigma, and
    // 1 - 2 sin^2(arcsin(sin a) - pi/4) == 2 sin(a) cos(a).
    const S sin_a = abs(dy) / guard, cos_a = abs(dx) / guard;
    const S angle = S(2) * sin_a * cos_a;
    const S gamma = S(2) - angle;

    S rho_x = safe_ratio(dx, enc.cw), rho_y = safe_ratio(dy, enc.ch);
    if (opt.siou_squared_offsets) {
        rho_x = rho_x * rho_x;
        rho_y = rho_y * rho_y;
    } else {
        rho_x = abs(rho_x);
        rho_y = abs(rho_y);
    }
    const S distance = (S(1) - exp(-gamma * rho_x)) + (S(1) - exp(-gamma * rho_y));

    auto shape_term = [&](const S& a, const S& b) {
        const S omega = safe_ratio(abs(a - b), max(a, b));
        S t = S(1) - exp(-omega);
        S p = S(1);
        const int theta = static_cast<int>(opt.siou_theta);
        if (static_cast<double>(theta) == opt.siou_theta && theta >= 0) {
            for (int i = 0; i < theta; ++i) p = p * t;
        } else {
            // Non-integer exponents: exp(theta * log t), with t > 0 away from equality.
            using std::log;
            p = value_of(t) > 0 ? exp(S(opt.siou_theta) * log(t)) : S(0);
        }
        return p;
    };
    const S shape = shape_term(pred.w, gt.w) + shape_term(pred.h, gt.h);
    return {ov.iou, angle, distance, shape};
}

// Regression loss of `pred` against `gt`; zero for identical boxes.
template <class S>
S box_loss(BoxLossKind kind, const BasicBox<S>& pred, const BasicBox<S>& gt, const BoxLossOptions& opt = {})
{
    using std::atan2;
    require_valid(pred, "box_loss");
    require_valid(gt, "box_loss");

    if (kind == BoxLossKind::siou) {
        const auto t = siou_terms(pred, gt, opt);
        return S(1) - t.iou + (t.distance + t.shape) * S(0.5);
    }

    const auto ov = overlap(pred, gt);
    const S base = S(1) - ov.iou;
    if (kind == BoxLossKind::iou) return base;

    const auto enc = enclosure(pred, gt);
    if (kind == BoxLossKind::giou) {
        using std::max;
        const S c_area = enc.cw * enc.ch;
        return base + safe_ratio(max(c_area - ov.uni, S(0)), c_area);
    }

    const S dist = safe_ratio(enc.center_dist2, enc.diag2);
    switch (kind) {
    case BoxLossKind::diou: return base + dist;
    case BoxLossKind::ciou: {
        const S k = S(4.0 / (std::numbers::pi * std::numbers::pi));
        const S da = atan2(gt.w, gt.h) - atan2(pred.w, pred.h);
        const S v = k * da * da;
        const S alpha = safe_ratio(v, base + v);
        return base + dist + alpha * v;
    }
    case BoxLossKind::eiou: {
        const S dw = pred.w - gt.w, dh = pred.h - gt.h;
        return base + dist + safe_ratio(dw * dw, enc.cw * enc.cw) + safe_ratio(dh * dh, enc.ch * enc.ch);
    }
    default: break;
    }
    throw Error("box_loss: unhandled kind");
}

struct RasterCounts {
    std::size_t a = 0, b = 0, inter = 0, uni = 0, cells = 0;
    double cell_area = 0;
};

// Counts the centers of an n x n grid laid over the enclosing box that fall
// inside A, B, both, or either.
inline RasterCounts rasterize_pair(const Box& a, const Box& b, std::size_t n)
{
    if (n == 0) throw Error("rasterize_pair: grid size must be positive");
    const auto enc = enclosure(a, b).box;
    RasterCounts r;
    r.cells = n * n;
    const double sx = enc.w / static_cast<double>(n), sy = enc.h / static_cast<double>(n);
    r.cell_area = sx * sy;
    auto inside = [](const Box& q, double x, double y) { return x >= q.x1() && x < q.x2() && y >= q.y1() && y < q.y2(); };
    for (std::size_t j = 0; j < n; ++j) {
        const double y = enc.y1() + (static_cast<double>(j) + 0.5) * sy;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = enc.x1() + (static_cast<double>(i) + 0.5) * sx;
            const bool ia = inside(a, x, y), ib = inside(b, x, y);
            r.a += ia;
            r.b += ib;
            r.inter += ia && ib;
            r.uni += ia || ib;
        }
    }
    return r;
}

inline double rasterized_iou_oracle(const Box& a, const Box& b, std::size_t grid_n)
{
    const auto r = rasterize_pair(a, b, grid_n);
    return r.uni ? static_cast<double>(r.inter) / static_cast<double>(r.uni) : 0.0;
}

// Per-row box loss over (M, 4) center-form predictions against constant
// targets. Gradients are taken by forward-mode differentiation of the scalar
// loss. `iou` receives the plain IoU of each row.
template <std::floating_point T>
Var<T> box_loss_rows(BoxLossKind kind, const Var<T>& pred, const Tensor<T>& target, Tensor<T>* iou_out = nullptr,
                     const BoxLossOptions& opt = {})
{
    const auto& s = pred.shape();
    if (s.size() != 2 || s[1] != 4 || target.shape() != s)
        throw ShapeError("box_loss_rows: expected matching (M, 4) tensors, got " + to_string(s) + " and "
                         + to_string(target.shape()));
    const std::size_t m = s[0];
    auto& g = pred.graph();
    Tensor<T> out({m});
    auto grads = std::make_shared<std::vector<T>>(m * 4);
    if (iou_out) *iou_out = Tensor<T>({m});
    auto p = pred.data();
    auto t = target.data();
    using D = Dual<double, 4>;
    for (std::size_t i = 0; i < m; ++i) {
        BasicBox<D> pb{D::variable(p[i * 4 + 0], 0), D::variable(p[i * 4 + 1], 1), D::variable(p[i * 4 + 2], 2),
                       D::variable(p[i * 4 + 3], 3)};
        BasicBox<D> tb{D(t[i * 4 + 0]), D(t[i * 4 + 1]), D(t[i * 4 + 2]), D(t[i * 4 + 3])};
        const D l = box_loss(kind, pb, tb, opt);
        out.data_mut()[i] = static_cast<T>(l.v);
        for (std::size_t k = 0; k < 4; ++k) (*grads)[i * 4 + k] = static_cast<T>(l.d[k]);
        if (iou_out) {
            const Box pv{p[i * 4 + 0], p[i * 4 + 1], p[i * 4 + 2], p[i * 4 + 3]};
            const Box tv{t[i * 4 + 0], t[i * 4 + 1], t[i * 4 + 2], t[i * 4 + 3]};
            iou_out->data_mut()[i] = static_cast<T>(overlap(pv, tv).iou);
        }
    }
    return g.record("box_loss", std::move(out), {pred}, [grads](Node<T>& self) {
        auto gy = self.value.grad();
        auto ga = input_grad(self, 0);
        if (ga.empty()) return;
        for (std::size_t i = 0; i < gy.size(); ++i)
            for (std::size_t k = 0; k < 4; ++k) ga[i * 4 + k] += gy[i] * (*grads)[i * 4 + k];
    });
}

} // namespace lyv5
