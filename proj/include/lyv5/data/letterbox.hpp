#pragma once

#include <cmath>

#include "image.hpp"
#include "labels.hpp"

namespace lyv5::data {

inline constexpr std::uint8_t kLetterboxFill = 114;

// Maps source pixel coordinates into the letterboxed square and back.
// dst = src * scale + pad, per axis.
struct LetterboxTransform {
    std::size_t src_w = 0, src_h = 0, size = 0;
    std::size_t resized_w = 0, resized_h = 0;
    std::size_t pad_left = 0, pad_top = 0;

    double scale_x() const { return static_cast<double>(resized_w) / static_cast<double>(src_w); }
    double scale_y() const { return static_cast<double>(resized_h) / static_cast<double>(src_h); }

    Box forward(const Box& b) const
    {
        return Box{b.cx * scale_x() + static_cast<double>(pad_left), b.cy * scale_y() + static_cast<double>(pad_top),
                   b.w * scale_x(), b.h * scale_y()};
    }
    Box inverse(const Box& b) const
    {
        return Box{(b.cx - static_cast<double>(pad_left)) / scale_x(), (b.cy - static_cast<double>(pad_top)) / scale_y(),
                   b.w / scale_x(), b.h / scale_y()};
    }

    // Normalized labels of the source frame to normalized labels of the square.
    LabelRecord forward(const LabelRecord& l) const
    {
        const auto b = forward(Box{l.cx * static_cast<double>(src_w), l.cy * static_cast<double>(src_h),
                                   l.w * static_cast<double>(src_w), l.h * static_cast<double>(src_h)});
        const double s = static_cast<double>(size);
        return {l.class_id, b.cx / s, b.cy / s, b.w / s, b.h / s};
    }
    LabelRecord inverse(const LabelRecord& l) const
    {
        const double s = static_cast<double>(size);
        const auto b = inverse(Box{l.cx * s, l.cy * s, l.w * s, l.h * s});
        const double w = static_cast<double>(src_w), h = static_cast<double>(src_h);
        return {l.class_id, b.cx / w, b.cy / h, b.w / w, b.h / h};
    }
};

inline LetterboxTransform letterbox_transform(std::size_t src_w, std::size_t src_h, std::size_t size)
{
    if (src_w == 0 || src_h == 0 || size == 0) throw Error("letterbox: zero dimension");
    LetterboxTransform t;
    t.src_w = src_w;
    t.src_h = src_h;
    t.size = size;
    const double s = static_cast<double>(size) / static_cast<double>(std::max(src_w, src_h));
    t.resized_w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(static_cast<double>(src_w) * s)), 1, size);
    t.resized_h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(static_cast<double>(src_h) * s)), 1, size);
    t.pad_left = (size - t.resized_w) / 2;
    t.pad_top = (size - t.resized_h) / 2;
    return t;
}

// Bilinear resample with half-pixel centres; an identity-size resize
// returns the input unchanged.
inline RgbImage resize_bilinear(const RgbImage& src, std::size_t w, std::size_t h)
{
    if (w == src.width && h == src.height) return src;
    RgbImage out(w, h);
    const double sx = static_cast<double>(src.width) / static_cast<double>(w);
    const double sy = static_cast<double>(src.height) / static_cast<double>(h);
    for (std::size_t y = 0; y < h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const auto y1 = std::min(y0 + 1, src.height - 1);
        const double ay = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const auto x1 = std::min(x0 + 1, src.width - 1);
            const double ax = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = src.at(x0, y0)[c] * (1 - ax) + src.at(x1, y0)[c] * ax;
                const double bot = src.at(x0, y1)[c] * (1 - ax) + src.at(x1, y1)[c] * ax;
                out.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(top * (1 - ay) + bot * ay));
            }
        }
    }
    return out;
}

struct Letterboxed {
    RgbImage image;
    LetterboxTransform transform;
};

// Aspect-preserving resize into a `size` square, centred on gray padding.
inline Letterboxed letterbox(const RgbImage& img, std::size_t size)
{
    Letterboxed r;
    r.transform = letterbox_transform(img.width, img.height, size);
    const auto& t = r.transform;
    const auto resized = resize_bilinear(img, t.resized_w, t.resized_h);
    r.image = RgbImage(size, size, kLetterboxFill);
    for (std::size_t y = 0; y < t.resized_h; ++y)
        std::copy_n(resized.at(0, y), t.resized_w * 3, r.image.at(t.pad_left, t.pad_top + y));
    return r;
}

} // namespace lyv5::data
