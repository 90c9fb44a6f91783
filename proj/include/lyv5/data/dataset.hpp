#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "../loss.hpp"
#include "letterbox.hpp"

namespace lyv5::data {

enum class SplitTag { train, val, test };

inline std::string to_string(SplitTag t)
{
    switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    }
    return "?";
}

inline SplitTag parse_split_tag(std::string_view s)
{
    if (s == "train") return SplitTag::train;
    if (s == "val") return SplitTag::val;
    if (s == "test") return SplitTag::test;
    throw Error("unknown split tag '" + std::string(s) + "'");
}

struct SampleRef {
    std::string stem;
    std::filesystem::path image, labels;
    SplitTag tag = SplitTag::train;
};

// Pairs <root>/images/<stem>.ppm with <root>/labels/<stem>.txt, sorted by stem.
inline std::vector<SampleRef> scan_dataset(const std::filesystem::path& root)
{
    const auto images = root / "images";
    if (!std::filesystem::is_directory(images)) throw Error("dataset: no images directory under " + root.string());
    std::vector<SampleRef> out;
    for (const auto& e : std::filesystem::directory_iterator(images)) {
        if (!e.is_regular_file() || e.path().extension() != ".ppm") continue;
        SampleRef s;
        s.stem = e.path().stem().string();
        s.image = e.path();
        s.labels = root / "labels" / (s.stem + ".txt");
        if (!std::filesystem::is_regular_file(s.labels))
            throw Error("dataset: missing label file " + s.labels.string());
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.stem < b.stem; });
    return out;
}

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

// Rounded 8:1:1; the training split absorbs the remainder.
inline SplitCounts split_counts(std::size_t n)
{
    SplitCounts c;
    c.val = c.test = static_cast<std::size_t>(std::lround(static_cast<double>(n) / 10.0));
    c.train = n - c.val - c.test;
    return c;
}

// Seeded shuffle, then the first 80% train, next 10% val, rest test. The
// result keeps the shuffled order.
inline std::vector<SampleRef> split_dataset(std::vector<SampleRef> samples, std::uint64_t seed)
{
    if (samples.size() < 10) throw Error("split: need at least 10 samples, have " + std::to_string(samples.size()));
    std::mt19937_64 rng(seed);
    std::shuffle(samples.begin(), samples.end(), rng);
    const auto c = split_counts(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i].tag = i < c.train ? SplitTag::train : i < c.train + c.val ? SplitTag::val : SplitTag::test;
    return samples;
}

inline std::filesystem::path manifest_path(const std::filesystem::path& root, std::uint64_t seed)
{
    return root / ("split_" + std::to_string(seed) + ".txt");
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<SampleRef>& samples)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("split: cannot write " + path.string());
    for (const auto& s : samples) out << s.stem << '\t' << to_string(s.tag) << '\n';
    if (!out) throw Error("split: write failed for " + path.string());
}

// Applies a manifest to scanned samples; every sample must be listed.
inline std::vector<SampleRef> apply_manifest(const std::filesystem::path& path, std::vector<SampleRef> samples)
{
    std::ifstream in(path);
    if (!in) throw Error("split: cannot open " + path.string());
    std::map<std::string, SplitTag> tags;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw Error(path.string() + ":" + std::to_string(no) + ": expected 'stem<TAB>tag'");
        tags[line.substr(0, tab)] = parse_split_tag(line.substr(tab + 1));
    }
    for (auto& s : samples) {
        auto it = tags.find(s.stem);
        if (it == tags.end()) throw Error("split: " + s.stem + " not listed in " + path.string());
        s.tag = it->second;
    }
    return samples;
}

// Reuses <root>/split_<seed>.txt when present, otherwise creates it.
inline std::vector<SampleRef> load_split(const std::filesystem::path& root, std::uint64_t seed)
{
    auto samples = scan_dataset(root);
    const auto path = manifest_path(root, seed);
    if (std::filesystem::exists(path)) return apply_manifest(path, std::move(samples));
    auto tagged = split_dataset(std::move(samples), seed);
    write_manifest(path, tagged);
    std::sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.stem < b.stem; });
    return tagged;
}

inline std::vector<SampleRef> select(const std::vector<SampleRef>& samples, SplitTag tag)
{
    std::vector<SampleRef> out;
    std::copy_if(samples.begin(), samples.end(), std::back_inserter(out), [&](const auto& s) { return s.tag == tag; });
    return out;
}

// A decoded, letterboxed sample with labels in the letterboxed frame.
struct LoadedSample {
    RgbImage image;
    std::vector<LabelRecord> labels;
    LetterboxTransform transform;
};

inline LoadedSample load_sample(const SampleRef& ref, std::size_t nc, std::size_t size)
{
    const auto raw = read_ppm(ref.image);
    const auto labels = read_labels(ref.labels, nc);
    auto lb = letterbox(raw, size);
    LoadedSample s;
    s.image = std::move(lb.image);
    s.transform = lb.transform;
    for (const auto& l : labels) s.labels.push_back(s.transform.forward(l));
    return s;
}

template <std::floating_point T>
struct Batch {
    Tensor<T> images;                  // (N, 3, S, S)
    std::vector<GroundTruth> targets;  // pixels of the S x S frame
};

// Stacks samples into a batch; flip[i] mirrors sample i horizontally.
template <std::floating_point T>
Batch<T> make_batch(const std::vector<const LoadedSample*>& samples, const std::vector<bool>& flip = {})
{
    if (samples.empty()) throw Error("batch: no samples");
    const std::size_t S = samples[0]->image.width;
    Batch<T> b;
    b.images = Tensor<T>({samples.size(), 3, S, S});
    auto dst = b.images.data_mut();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = *samples[i];
        if (s.image.width != S || s.image.height != S) throw ShapeError("batch: samples differ in size");
        const bool f = i < flip.size() && flip[i];
        const auto t = to_tensor<T>(f ? hflip(s.image) : s.image);
        std::copy(t.data().begin(), t.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(i * 3 * S * S));
        for (const auto& l : f ? hflip(s.labels) : s.labels)
            b.targets.push_back({i, l.class_id, l.to_pixels(static_cast<double>(S), static_cast<double>(S))});
    }
    return b;
}

} // namespace lyv5::data
