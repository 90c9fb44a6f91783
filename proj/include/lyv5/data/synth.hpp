#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "image.hpp"
#include "labels.hpp"

namespace lyv5::data {

inline constexpr std::size_t kFlameClass = 0;
inline constexpr std::size_t kSmokeClass = 1;

struct SynthOptions {
    std::size_t width = 128, height = 128;
    std::size_t min_objects = 1, max_objects = 3;
    // Object diameter as a fraction of the shorter image side.
    double min_extent = 0.16, max_extent = 0.42;
};

struct SynthObject {
    LabelRecord label;
    std::vector<bool> mask; // width * height, row-major
};

struct SynthScene {
    RgbImage image;
    std::vector<SynthObject> objects;

    std::vector<LabelRecord> labels() const
    {
        std::vector<LabelRecord> out;
        for (const auto& o : objects) out.push_back(o.label);
        return out;
    }
};

namespace detail {

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

inline void paint_background(RgbImage& img, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> tone(15, 110), noise(-6, 6);
    const std::array<double, 3> top{tone(rng), tone(rng), tone(rng) + 20};
    const std::array<double, 3> bottom{tone(rng), tone(rng), tone(rng)};
    for (std::size_t y = 0; y < img.height; ++y) {
        const double t = static_cast<double>(y) / static_cast<double>(std::max<std::size_t>(img.height - 1, 1));
        for (std::size_t x = 0; x < img.width; ++x) {
            const double n = noise(rng);
            for (std::size_t c = 0; c < 3; ++c) img.at(x, y)[c] = to_byte(top[c] * (1 - t) + bottom[c] * t + n);
        }
    }
    // A few dim blocks for clutter.
    std::uniform_int_distribution<std::size_t> nblocks(0, 3);
    std::uniform_real_distribution<double> frac(0, 1);
    for (std::size_t b = nblocks(rng); b-- > 0;) {
        const auto x0 = static_cast<std::size_t>(frac(rng) * static_cast<double>(img.width));
        const auto y0 = static_cast<std::size_t>(frac(rng) * static_cast<double>(img.height));
        const auto bw = 1 + static_cast<std::size_t>(frac(rng) * static_cast<double>(img.width) / 3);
        const auto bh = 1 + static_cast<std::size_t>(frac(rng) * static_cast<double>(img.height) / 3);
        const std::array<double, 3> col{tone(rng) * 0.6, tone(rng) * 0.6, tone(rng) * 0.6};
        for (std::size_t y = y0; y < std::min(y0 + bh, img.height); ++y)
            for (std::size_t x = x0; x < std::min(x0 + bw, img.width); ++x)
                for (std::size_t c = 0; c < 3; ++c) img.at(x, y)[c] = to_byte(col[c] + noise(rng));
    }
}

// Radial shape function: inside when r <= boundary(theta).
struct Blob {
    double x0, y0, rx, ry;
    std::array<double, 2> amp{}, phase{};
    double tongue = 0; // upward stretch for flames

    double boundary(double theta) const
    {
        // Image y grows downward, so "up" is sin(theta) < 0.
        const double up = std::max(0.0, -std::sin(theta));
        return 1.0 + amp[0] * std::sin(3 * theta + phase[0]) + amp[1] * std::sin(7 * theta + phase[1])
               + tongue * up * up * up;
    }
    // Normalized radius of (px, py) relative to the local boundary.
    double radius(double px, double py) const
    {
        const double u = (px - x0) / rx, v = (py - y0) / ry;
        return std::hypot(u, v) / boundary(std::atan2(v, u));
    }
    double max_reach() const { return 1.0 + amp[0] + amp[1] + tongue; }
};

} // namespace detail

// Renders one scene: warm radial-gradient flames (class 0) and gray
// translucent smoke ellipses (class 1), non-overlapping, over a cluttered
// gradient background. Labels are the tight bounds of each rendered mask.
inline SynthScene render_scene(std::mt19937_64& rng, const SynthOptions& opt = {})
{
    if (opt.width < 8 || opt.height < 8) throw Error("synth: image must be at least 8x8");
    if (opt.min_objects == 0 || opt.max_objects < opt.min_objects) throw Error("synth: bad object count range");
    SynthScene s;
    s.image = RgbImage(opt.width, opt.height);
    detail::paint_background(s.image, rng);

    const double W = static_cast<double>(opt.width), H = static_cast<double>(opt.height);
    const double side = std::min(W, H);
    std::uniform_int_distribution<std::size_t> count(opt.min_objects, opt.max_objects);
    std::uniform_real_distribution<double> extent(opt.min_extent, opt.max_extent), unit(0, 1),
        angle(0, 2 * std::numbers::pi);
    std::vector<std::array<double, 4>> taken; // reserved x1, y1, x2, y2

    const auto n = count(rng);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t cls = unit(rng) < 0.5 ? kFlameClass : kSmokeClass;
        detail::Blob b{};
        b.rx = extent(rng) * side / 2;
        if (cls == kFlameClass) {
            b.ry = b.rx * (1.0 + 0.5 * unit(rng));
            b.amp = {0.04 + 0.05 * unit(rng), 0.02 + 0.03 * unit(rng)};
            b.phase = {angle(rng), angle(rng)};
            b.tongue = 0.15 + 0.2 * unit(rng);
        } else {
            b.ry = b.rx * (0.55 + 0.4 * unit(rng));
        }
        const double reach_x = b.rx * b.max_reach(), reach_y = b.ry * b.max_reach();
        if (2 * reach_x + 2 >= W || 2 * reach_y + 2 >= H) continue;

        bool placed = false;
        for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
            b.x0 = reach_x + 1 + unit(rng) * (W - 2 * reach_x - 2);
            b.y0 = reach_y + 1 + unit(rng) * (H - 2 * reach_y - 2);
            const std::array<double, 4> r{b.x0 - reach_x - 2, b.y0 - reach_y - 2, b.x0 + reach_x + 2, b.y0 + reach_y + 2};
            placed = std::none_of(taken.begin(), taken.end(), [&](const auto& t) {
                return r[0] < t[2] && t[0] < r[2] && r[1] < t[3] && t[1] < r[3];
            });
            if (placed) taken.push_back(r);
        }
        if (!placed) continue;

        SynthObject obj;
        obj.mask.assign(opt.width * opt.height, false);
        std::size_t x1 = opt.width, y1 = opt.height, x2 = 0, y2 = 0;
        const double gray = 150 + 60 * unit(rng);
        const double alpha = 0.55 + 0.2 * unit(rng);
        std::uniform_real_distribution<double> grain(-5, 5);
        for (std::size_t y = 0; y < opt.height; ++y)
            for (std::size_t x = 0; x < opt.width; ++x) {
                const double r = b.radius(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
                if (r > 1.0) continue;
                auto* px = s.image.at(x, y);
                if (cls == kFlameClass) {
                    // White-yellow core through orange to a deep red rim.
                    const double t = r;
                    const double red = 255 - 40 * t * t;
                    const double green = 240 * (1 - t) + 40 * t;
                    const double blue = 170 * std::max(0.0, 1 - 2.5 * t) + 10;
                    px[0] = detail::to_byte(red + grain(rng));
                    px[1] = detail::to_byte(green + grain(rng));
                    px[2] = detail::to_byte(blue);
                } else {
                    const double a = alpha * (1 - 0.3 * r * r);
                    for (std::size_t c = 0; c < 3; ++c) px[c] = detail::to_byte(a * (gray + grain(rng)) + (1 - a) * px[c]);
                }
                obj.mask[y * opt.width + x] = true;
                x1 = std::min(x1, x);
                y1 = std::min(y1, y);
                x2 = std::max(x2, x + 1);
                y2 = std::max(y2, y + 1);
            }
        if (x2 <= x1 || y2 <= y1) continue;
        obj.label = {cls, (static_cast<double>(x1 + x2) / 2) / W, (static_cast<double>(y1 + y2) / 2) / H,
                     static_cast<double>(x2 - x1) / W, static_cast<double>(y2 - y1) / H};
        s.objects.push_back(std::move(obj));
    }
    return s;
}

inline std::string synth_stem(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%05zu", i);
    return buf;
}

// Writes `n` scenes as <out>/images/<stem>.ppm and <out>/labels/<stem>.txt.
// Scene i depends only on (seed, i).
inline std::vector<std::string> synth_generate(std::size_t n, std::uint64_t seed, const std::filesystem::path& out,
                                               const SynthOptions& opt = {})
{
    std::error_code ec;
    std::filesystem::create_directories(out / "images", ec);
    if (!ec) std::filesystem::create_directories(out / "labels", ec);
    if (ec) throw Error("synth: cannot create " + out.string() + ": " + ec.message());
    std::vector<std::string> stems;
    for (std::size_t i = 0; i < n; ++i) {
        std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(sq);
        const auto scene = render_scene(rng, opt);
        const auto stem = synth_stem(i);
        write_ppm(out / "images" / (stem + ".ppm"), scene.image);
        write_labels(out / "labels" / (stem + ".txt"), scene.labels());
        stems.push_back(stem);
    }
    return stems;
}

} // namespace lyv5::data
