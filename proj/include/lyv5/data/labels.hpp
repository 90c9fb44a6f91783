#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "../box.hpp"

namespace lyv5::data {

// One YOLO-format label: class and a box normalized to the image frame.
struct LabelRecord {
    std::size_t class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;

    bool operator==(const LabelRecord&) const = default;

    // Pixel box, clipped to the frame.
    Box to_pixels(double width, double height) const
    {
        const double x1 = std::clamp(cx - w / 2, 0.0, 1.0) * width, x2 = std::clamp(cx + w / 2, 0.0, 1.0) * width;
        const double y1 = std::clamp(cy - h / 2, 0.0, 1.0) * height, y2 = std::clamp(cy + h / 2, 0.0, 1.0) * height;
        return Box::from_corners(x1, y1, x2, y2);
    }
};

class LabelError : public Error {
public:
    LabelError(const std::string& source, std::size_t line, const std::string& msg)
        : Error(source + ":" + std::to_string(line) + ": " + msg), line_(line)
    {
    }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Parses "class cx cy w h" lines. Blank lines are skipped; `nc` bounds the
// class id.
inline std::vector<LabelRecord> parse_labels(std::string_view text, std::size_t nc, const std::string& source = "<labels>")
{
    std::vector<LabelRecord> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string line(text.substr(start, end - start));
        start = end + 1;
        ++line_no;

        std::istringstream ss(line);
        std::vector<std::string> tok;
        for (std::string t; ss >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok.size() != 5)
            throw LabelError(source, line_no, "expected 5 fields, found " + std::to_string(tok.size()));

        LabelRecord r;
        {
            const auto& t = tok[0];
            const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), r.class_id);
            if (ec != std::errc{} || p != t.data() + t.size())
                throw LabelError(source, line_no, "class id '" + t + "' is not a non-negative integer");
            if (r.class_id >= nc)
                throw LabelError(source, line_no,
                                 "class id " + t + " out of range for " + std::to_string(nc) + " classes");
        }
        double* fields[4] = {&r.cx, &r.cy, &r.w, &r.h};
        static constexpr const char* names[4] = {"cx", "cy", "w", "h"};
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& t = tok[k + 1];
            const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), *fields[k]);
            if (ec != std::errc{} || p != t.data() + t.size())
                throw LabelError(source, line_no, std::string(names[k]) + " value '" + t + "' is not a number");
            if (!(*fields[k] >= 0.0 && *fields[k] <= 1.0))
                throw LabelError(source, line_no, std::string(names[k]) + " value " + t + " outside [0, 1]");
        }
        out.push_back(r);
        if (end == text.size()) break;
    }
    return out;
}

inline std::vector<LabelRecord> read_labels(const std::filesystem::path& path, std::size_t nc)
{
    std::ifstream in(path);
    if (!in) throw Error("labels: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_labels(ss.str(), nc, path.string());
}

inline std::string format_labels(const std::vector<LabelRecord>& labels)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    for (const auto& l : labels) os << l.class_id << ' ' << l.cx << ' ' << l.cy << ' ' << l.w << ' ' << l.h << '\n';
    return os.str();
}

inline void write_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& labels)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("labels: cannot write " + path.string());
    out << format_labels(labels);
    if (!out) throw Error("labels: write failed for " + path.string());
}

inline std::vector<LabelRecord> hflip(std::vector<LabelRecord> labels)
{
    for (auto& l : labels) l.cx = 1.0 - l.cx;
    return labels;
}

} // namespace lyv5::data
