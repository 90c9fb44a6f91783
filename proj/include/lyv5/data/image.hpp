#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "../tensor.hpp"

namespace lyv5::data {

// 8-bit interleaved RGB raster.
struct RgbImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels; // row-major, 3 bytes per pixel

    RgbImage() = default;
    RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

    std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
    const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + (y * width + x) * 3; }
    bool operator==(const RgbImage&) const = default;
};

class ImageError : public Error {
public:
    enum class Kind { io, bad_magic, bad_header, unsupported_maxval, truncated };

    ImageError(Kind kind, const std::string& msg) : Error("image: " + msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace detail {

class PpmHeaderReader {
public:
    PpmHeaderReader(const std::vector<std::uint8_t>& b, const std::string& src) : b_(b), src_(src) {}

    void skip_space_and_comments()
    {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what)
    {
        skip_space_and_comments();
        if (pos_ >= b_.size())
            throw ImageError(ImageError::Kind::truncated, src_ + ": header ends before " + what);
        if (!std::isdigit(b_[pos_]))
            throw ImageError(ImageError::Kind::bad_header, src_ + ": expected " + std::string(what));
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + static_cast<std::size_t>(b_[pos_++] - '0');
            if (v > (1u << 24)) throw ImageError(ImageError::Kind::bad_header, src_ + ": " + what + " too large");
        }
        return v;
    }

    // Exactly one whitespace byte separates the header from the raster.
    void end_of_header()
    {
        if (pos_ >= b_.size()) throw ImageError(ImageError::Kind::truncated, src_ + ": no raster after header");
        if (!std::isspace(b_[pos_])) throw ImageError(ImageError::Kind::bad_header, src_ + ": malformed maxval");
        ++pos_;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    const std::vector<std::uint8_t>& b_;
    const std::string& src_;
    std::size_t pos_ = 0;
};

} // namespace detail

// Binary PPM (P6) with maxval 1..255; samples are rescaled to 0..255.
inline RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>")
{
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw ImageError(ImageError::Kind::bad_magic, source + ": not a binary PPM (expected 'P6')");
    detail::PpmHeaderReader r(bytes, source);
    r.advance(2);
    const auto w = r.number("width");
    const auto h = r.number("height");
    const auto maxval = r.number("maxval");
    if (w == 0 || h == 0) throw ImageError(ImageError::Kind::bad_header, source + ": zero image dimension");
    if (maxval == 0 || maxval > 255)
        throw ImageError(ImageError::Kind::unsupported_maxval,
                         source + ": maxval " + std::to_string(maxval) + " (only 8-bit samples are supported)");
    r.end_of_header();
    const std::size_t need = w * h * 3;
    if (bytes.size() - r.pos() < need)
        throw ImageError(ImageError::Kind::truncated, source + ": raster has " + std::to_string(bytes.size() - r.pos())
                                                          + " bytes, expected " + std::to_string(need));
    RgbImage img(w, h);
    for (std::size_t i = 0; i < need; ++i) {
        const auto v = bytes[r.pos() + i];
        if (v > maxval) throw ImageError(ImageError::Kind::bad_header, source + ": sample exceeds maxval");
        img.pixels[i] = maxval == 255 ? v : static_cast<std::uint8_t>((v * 255u + maxval / 2) / maxval);
    }
    return img;
}

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img)
{
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline RgbImage read_ppm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError(ImageError::Kind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_ppm(bytes, path.string());
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img)
{
    const auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageError(ImageError::Kind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError(ImageError::Kind::io, "write failed for " + path.string());
}

// (3, H, W) planar tensor scaled to [0, 1].
template <std::floating_point T = float>
Tensor<T> to_tensor(const RgbImage& img)
{
    Tensor<T> t({3, img.height, img.width});
    auto d = t.data_mut();
    const std::size_t plane = img.width * img.height;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) d[c * plane + i] = static_cast<T>(img.pixels[i * 3 + c]) / T(255);
    return t;
}

template <std::floating_point T>
RgbImage from_tensor(const Tensor<T>& t)
{
    if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("from_tensor: expected (3, H, W), got " + to_string(t.shape()));
    RgbImage img(t.dim(2), t.dim(1));
    const std::size_t plane = img.width * img.height;
    auto d = t.data();
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(d[c * plane + i]), 0.0, 1.0);
            img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    return img;
}

inline Tensor<float> decode_image(const std::filesystem::path& path) { return to_tensor<float>(read_ppm(path)); }

inline RgbImage hflip(const RgbImage& img)
{
    RgbImage out(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const auto* s = img.at(img.width - 1 - x, y);
            std::copy(s, s + 3, out.at(x, y));
        }
    return out;
}

} // namespace lyv5::data
