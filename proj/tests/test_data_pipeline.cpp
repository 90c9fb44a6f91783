#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <unistd.h>

#include "lyv5/data/dataset.hpp"
#include "lyv5/data/synth.hpp"

using namespace lyv5;
using namespace lyv5::data;

namespace {

std::filesystem::path fresh_dir(const std::string& tag)
{
    auto p = std::filesystem::temp_directory_path() / ("lyv5_data_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RgbImage random_image(std::size_t w, std::size_t h, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    RgbImage img(w, h);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng());
    return img;
}

ImageError::Kind decode_error_kind(const std::string& s)
{
    try {
        decode_ppm(bytes_of(s));
    } catch (const ImageError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error for " << s.substr(0, 20);
    return ImageError::Kind::io;
}

std::vector<SampleRef> fake_samples(std::size_t n)
{
    std::vector<SampleRef> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i].stem = synth_stem(i);
    return s;
}

} // namespace

TEST(Ppm, DecodesToPlanarUnitRange)
{
    const auto white = to_tensor(decode_ppm(bytes_of(std::string("P6\n1 1\n255\n") + "\xff\xff\xff")));
    EXPECT_EQ(white.shape(), (Shape{3, 1, 1}));
    for (float v : white.data()) EXPECT_EQ(v, 1.0f);

    // Red then blue: channel planes are contiguous, pixels run along x.
    const auto t = to_tensor(decode_ppm(bytes_of(std::string("P6 2 1 255\n") + std::string("\xff\0\0\0\0\xff", 6))));
    EXPECT_EQ(t.shape(), (Shape{3, 1, 2}));
    EXPECT_EQ(std::vector<float>(t.data().begin(), t.data().end()), (std::vector<float>{1, 0, 0, 0, 0, 1}));
}

TEST(Ppm, HeaderCommentsAndSmallMaxval)
{
    const auto img = decode_ppm(bytes_of(std::string("P6\n# made by hand\n1 # width\n1\n15\n") + std::string("\x0f\x00\x05", 3)));
    EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{255, 0, 85}));
}

TEST(Ppm, EncodeDecodeRoundTripIsBitExact)
{
    const auto dir = fresh_dir("ppm");
    for (auto [w, h] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 3}, {64, 48}}) {
        const auto img = random_image(w, h, w * 31 + h);
        EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
        write_ppm(dir / "a.ppm", img);
        EXPECT_EQ(read_ppm(dir / "a.ppm"), img);
        EXPECT_EQ(from_tensor(to_tensor<double>(img)), img);
        EXPECT_EQ(from_tensor(decode_image(dir / "a.ppm")), img);
    }
    std::filesystem::remove_all(dir);
}

TEST(Ppm, MalformedInputsRaiseDistinctErrors)
{
    using K = ImageError::Kind;
    EXPECT_EQ(decode_error_kind("P3\n1 1\n255\n1 2 3"), K::bad_magic);
    EXPECT_EQ(decode_error_kind("GIF89a"), K::bad_magic);
    EXPECT_EQ(decode_error_kind("P6\n2 2\n255\n\x01\x02\x03"), K::truncated);
    EXPECT_EQ(decode_error_kind("P6\n2 2"), K::truncated);
    EXPECT_EQ(decode_error_kind("P6\n1 1\n65535\n\0\0\0\0\0\0"), K::unsupported_maxval);
    EXPECT_EQ(decode_error_kind("P6\n1 1\n0\n\0\0\0"), K::unsupported_maxval);
    EXPECT_EQ(decode_error_kind("P6\nx 1\n255\n\0\0\0"), K::bad_header);
    EXPECT_EQ(decode_error_kind("P6\n0 1\n255\n"), K::bad_header);
    try {
        read_ppm("/nonexistent/lyv5.ppm");
        FAIL();
    } catch (const ImageError& e) {
        EXPECT_EQ(e.kind(), K::io);
    }
}

TEST(Labels, ParsesLinesAndToleratesBlanks)
{
    EXPECT_EQ(parse_labels("0 0.5 0.5 0.2 0.2", 2), (std::vector<LabelRecord>{{0, 0.5, 0.5, 0.2, 0.2}}));
    EXPECT_TRUE(parse_labels("", 2).empty());
    EXPECT_TRUE(parse_labels("\n  \n\t\n", 2).empty());
    const auto two = parse_labels("\n1 0.1 0.2 0.3 0.4\r\n\n0 1 1 0 0\n", 2);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two[0], (LabelRecord{1, 0.1, 0.2, 0.3, 0.4}));
    EXPECT_EQ(parse_labels(format_labels(two), 2), two);
}

TEST(Labels, ErrorsCarryLineNumbers)
{
    auto line_of = [](const std::string& text, std::size_t nc) -> std::size_t {
        try {
            parse_labels(text, nc, "x.txt");
        } catch (const LabelError& e) {
            EXPECT_NE(std::string(e.what()).find("x.txt:" + std::to_string(e.line())), std::string::npos);
            return e.line();
        }
        return 0;
    };
    EXPECT_EQ(line_of("1 0.5 0.5 1.5 0.2", 2), 1u);
    EXPECT_EQ(line_of("0 0.5 0.5 0.2 0.2\n\n0 0.5 abc 0.2 0.2", 2), 3u);
    EXPECT_EQ(line_of("0 0.5 0.5 0.2 0.2\n2 0.5 0.5 0.2 0.2", 2), 2u);
    EXPECT_EQ(line_of("-1 0.5 0.5 0.2 0.2", 2), 1u);
    EXPECT_EQ(line_of("0.5 0.5 0.5 0.2 0.2", 2), 1u);
    EXPECT_EQ(line_of("0 0.5 0.5 0.2", 2), 1u);
    EXPECT_EQ(line_of("0 0.5 0.5 0.2 0.2 7", 2), 1u);
    EXPECT_EQ(line_of("0 0.5 -0.01 0.2 0.2", 2), 1u);
    EXPECT_EQ(line_of("0 nan 0.5 0.2 0.2", 2), 1u);
}

TEST(Labels, PixelBoxesClipToFrame)
{
    const LabelRecord l{0, 0.9, 0.5, 0.4, 0.2};
    const auto b = l.to_pixels(100, 50);
    EXPECT_DOUBLE_EQ(b.x1(), 70);
    EXPECT_DOUBLE_EQ(b.x2(), 100);
    EXPECT_DOUBLE_EQ(b.y1(), 20);
    EXPECT_DOUBLE_EQ(b.y2(), 30);
}

TEST(Split, EightyTenTenPartition)
{
    const auto s = split_dataset(fake_samples(20), 3);
    std::map<SplitTag, std::size_t> count;
    std::set<std::string> stems;
    for (const auto& x : s) {
        ++count[x.tag];
        stems.insert(x.stem);
    }
    EXPECT_EQ(count[SplitTag::train], 16u);
    EXPECT_EQ(count[SplitTag::val], 2u);
    EXPECT_EQ(count[SplitTag::test], 2u);
    EXPECT_EQ(stems.size(), 20u);

    for (std::size_t n = 10; n <= 203; ++n) {
        const auto c = split_counts(n);
        EXPECT_EQ(c.train + c.val + c.test, n);
        // Within one sample of 80% and 10%, in integers to avoid 0.8 * n rounding.
        const auto off = [](std::size_t count, std::size_t tenths, std::size_t n) {
            return std::llabs(10 * static_cast<long long>(count) - static_cast<long long>(tenths * n));
        };
        EXPECT_LE(off(c.train, 8, n), 10) << n;
        EXPECT_LE(off(c.val, 1, n), 10) << n;
    }
    EXPECT_THROW(split_dataset(fake_samples(9), 0), Error);
}

TEST(Split, SeedDeterminesAssignment)
{
    auto tags = [](const std::vector<SampleRef>& s) {
        std::map<std::string, SplitTag> m;
        for (const auto& x : s) m[x.stem] = x.tag;
        return m;
    };
    EXPECT_EQ(tags(split_dataset(fake_samples(50), 11)), tags(split_dataset(fake_samples(50), 11)));
    EXPECT_NE(tags(split_dataset(fake_samples(50), 11)), tags(split_dataset(fake_samples(50), 12)));
}

TEST(Split, ManifestIsWrittenAndReused)
{
    const auto dir = fresh_dir("manifest");
    synth_generate(12, 5, dir, {.width = 32, .height = 32});
    const auto first = load_split(dir, 42);
    const auto path = manifest_path(dir, 42);
    ASSERT_TRUE(std::filesystem::exists(path));
    EXPECT_EQ(path.filename(), "split_42.txt");
    const auto text = slurp(path);
    EXPECT_NE(text.find("synth_00000\t"), std::string::npos);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 12);

    // Hand-edit the manifest: the edited assignment wins over reshuffling.
    std::ofstream(path, std::ios::trunc) << [&] {
        std::string s;
        for (const auto& x : first) s += x.stem + "\ttest\n";
        return s;
    }();
    for (const auto& x : load_split(dir, 42)) EXPECT_EQ(x.tag, SplitTag::test);
    std::ofstream(path, std::ios::trunc) << "synth_00000\ttrain\n";
    EXPECT_THROW(load_split(dir, 42), Error);
    std::filesystem::remove_all(dir);
}

TEST(Dataset, ScanRequiresMatchingLabels)
{
    const auto dir = fresh_dir("scan");
    EXPECT_THROW(scan_dataset(dir), Error);
    synth_generate(3, 1, dir, {.width = 32, .height = 32});
    EXPECT_EQ(scan_dataset(dir).size(), 3u);
    std::filesystem::remove(dir / "labels" / "synth_00001.txt");
    EXPECT_THROW(scan_dataset(dir), Error);
    std::filesystem::remove_all(dir);
}

TEST(Letterbox, SquareInputIsPureResize)
{
    const auto img = random_image(64, 64, 1);
    const auto lb = letterbox(img, 128);
    EXPECT_EQ(lb.transform.pad_left, 0u);
    EXPECT_EQ(lb.transform.pad_top, 0u);
    EXPECT_EQ(lb.transform.resized_w, 128u);
    EXPECT_EQ(letterbox(img, 64).image, img);
}

TEST(Letterbox, WideInputPadsAQuarterTopAndBottom)
{
    const RgbImage img(200, 100, 7);
    const auto lb = letterbox(img, 448);
    EXPECT_EQ(lb.transform.resized_w, 448u);
    EXPECT_EQ(lb.transform.resized_h, 224u);
    EXPECT_EQ(lb.transform.pad_top, 112u); // 25% of 448
    EXPECT_EQ(lb.image.at(10, 111)[0], kLetterboxFill);
    EXPECT_EQ(lb.image.at(10, 112)[0], 7);
    EXPECT_EQ(lb.image.at(10, 335)[0], 7);
    EXPECT_EQ(lb.image.at(10, 336)[0], kLetterboxFill);
}

TEST(Letterbox, LabelRoundTrip)
{
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> side(5, 900);
    std::uniform_real_distribution<double> u(0, 1);
    double worst = 0;
    for (int i = 0; i < 500; ++i) {
        const auto t = letterbox_transform(side(rng), side(rng), 448);
        const LabelRecord l{0, u(rng), u(rng), u(rng), u(rng)};
        const auto back = t.inverse(t.forward(l));
        for (double d : {back.cx - l.cx, back.cy - l.cy, back.w - l.w, back.h - l.h}) worst = std::max(worst, std::abs(d));
        const auto f = t.forward(l);
        EXPECT_GE(f.cx, 0.0);
        EXPECT_LE(f.cx, 1.0);
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(Synth, WritesValidPairs)
{
    const auto dir = fresh_dir("synth");
    const auto stems = synth_generate(10, 9, dir);
    ASSERT_EQ(stems.size(), 10u);
    std::set<std::size_t> classes;
    for (const auto& s : stems) {
        const auto img = read_ppm(dir / "images" / (s + ".ppm"));
        EXPECT_EQ(img.width, 128u);
        const auto labels = read_labels(dir / "labels" / (s + ".txt"), 2);
        EXPECT_FALSE(labels.empty());
        for (const auto& l : labels) classes.insert(l.class_id);
    }
    EXPECT_EQ(classes, (std::set<std::size_t>{0, 1}));
    std::filesystem::remove_all(dir);
}

TEST(Synth, SameSeedIsByteIdentical)
{
    const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b"), c = fresh_dir("synth_c");
    synth_generate(4, 77, a);
    synth_generate(4, 77, b);
    synth_generate(4, 78, c);
    for (std::size_t i = 0; i < 4; ++i) {
        for (const auto& sub : {std::string("images/") + synth_stem(i) + ".ppm", std::string("labels/") + synth_stem(i) + ".txt"}) {
            EXPECT_EQ(slurp(a / sub), slurp(b / sub)) << sub;
        }
        EXPECT_NE(slurp(a / "images" / (synth_stem(i) + ".ppm")), slurp(c / "images" / (synth_stem(i) + ".ppm")));
    }
    for (const auto& d : {a, b, c}) std::filesystem::remove_all(d);
}

TEST(Synth, BoxesTightlyBoundRenderedBlobs)
{
    std::mt19937_64 rng(10);
    SynthOptions opt;
    opt.width = 160;
    opt.height = 96;
    std::size_t objects = 0;
    for (int scene = 0; scene < 60; ++scene) {
        const auto s = render_scene(rng, opt);
        ASSERT_FALSE(s.objects.empty());
        for (const auto& o : s.objects) {
            const auto box = o.label.to_pixels(160, 96);
            std::size_t inside = 0, outside = 0;
            for (std::size_t y = 0; y < opt.height; ++y)
                for (std::size_t x = 0; x < opt.width; ++x) {
                    if (!o.mask[y * opt.width + x]) continue;
                    const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                    (px > box.x1() && px < box.x2() && py > box.y1() && py < box.y2() ? inside : outside)++;
                }
            EXPECT_EQ(outside, 0u);
            EXPECT_GE(static_cast<double>(inside) / box.area(), 0.6) << "class " << o.label.class_id;
            ++objects;
        }
    }
    EXPECT_GT(objects, 60u);
}

TEST(Synth, LetterboxAndFlipKeepBoxesOverObjects)
{
    std::mt19937_64 rng(12);
    SynthOptions opt;
    opt.width = 150;
    opt.height = 90;
    for (int scene = 0; scene < 20; ++scene) {
        const auto s = render_scene(rng, opt);
        const auto t = letterbox_transform(opt.width, opt.height, 128);
        for (const auto& o : s.objects) {
            const auto boxed = t.forward(o.label).to_pixels(128, 128);
            const auto flipped = hflip(std::vector<LabelRecord>{o.label})[0].to_pixels(150, 90);
            for (std::size_t y = 0; y < opt.height; ++y)
                for (std::size_t x = 0; x < opt.width; ++x) {
                    if (!o.mask[y * opt.width + x]) continue;
                    const auto p = t.forward(Box{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, 0, 0});
                    EXPECT_TRUE(p.cx > boxed.x1() && p.cx < boxed.x2() && p.cy > boxed.y1() && p.cy < boxed.y2());
                    const double fx = 150.0 - (static_cast<double>(x) + 0.5);
                    EXPECT_TRUE(fx > flipped.x1() && fx < flipped.x2());
                }
        }
    }
}

TEST(Flip, ImageFlipIsAnInvolution)
{
    const auto img = random_image(9, 4, 3);
    const auto f = hflip(img);
    EXPECT_EQ(f.at(0, 2)[1], img.at(8, 2)[1]);
    EXPECT_EQ(hflip(f), img);
}

TEST(Batch, StacksImagesAndConvertsTargets)
{
    std::mt19937_64 rng(4);
    LoadedSample a, b;
    a.image = random_image(32, 32, 5);
    a.labels = {{1, 0.25, 0.5, 0.5, 0.25}};
    b.image = random_image(32, 32, 6);
    const auto batch = make_batch<float>({&a, &b}, {true, false});
    EXPECT_EQ(batch.images.shape(), (Shape{2, 3, 32, 32}));
    ASSERT_EQ(batch.targets.size(), 1u);
    EXPECT_EQ(batch.targets[0].image, 0u);
    EXPECT_EQ(batch.targets[0].class_id, 1u);
    EXPECT_DOUBLE_EQ(batch.targets[0].box.cx, 24.0); // mirrored
    EXPECT_DOUBLE_EQ(batch.targets[0].box.w, 16.0);
    // Sample 0 is mirrored, sample 1 is not.
    EXPECT_FLOAT_EQ(batch.images.data()[0], static_cast<float>(a.image.at(31, 0)[0]) / 255.0f);
    EXPECT_FLOAT_EQ(batch.images.data()[3 * 32 * 32], static_cast<float>(b.image.at(0, 0)[0]) / 255.0f);
    LoadedSample c;
    c.image = random_image(16, 16, 7);
    EXPECT_THROW(make_batch<float>({&a, &c}), ShapeError);
}
