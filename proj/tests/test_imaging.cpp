#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "test_util.hpp"
#include "trifuse/common.hpp"
#include "trifuse/image.hpp"
#include "trifuse/image_io.hpp"
#include "trifuse/manifest.hpp"
#include "trifuse/patches.hpp"
#include "trifuse/rng.hpp"
#include "trifuse/synth.hpp"

using namespace trifuse;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

double mean_of(const ImageTensor& img) { return mean_intensity(img); }

}  // namespace

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(42);
    Rng crop = base.stream("crop");
    Rng noise = base.stream("noise");
    CHECK(crop.next_u64() != noise.next_u64());

    // Drawing from one stream must not shift another.
    Rng base2(42);
    Rng crop2 = base2.stream("crop");
    Rng crop3 = Rng(42).stream("crop");
    (void)base2.stream("noise").next_u64();
    CHECK(crop2.next_u64() == crop3.next_u64());

    // Box-Muller moments over 20k draws.
    Rng n(7);
    double sum = 0.0, sq = 0.0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        double v = n.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / N) < 0.03);
    CHECK(std::abs(sq / N - 1.0) < 0.05);
}

TEST_CASE("png and ppm round trips") {
    for (int c : {1, 3}) {
        ImageTensor img = testutil::textured_image(21, 17, c, 90 + c);
        testutil::ScratchDir dir("io");
        std::string ext = c == 3 ? ".ppm" : ".pgm";
        for (const std::string& name : {std::string("a.png"), "b" + ext}) {
            std::string path = dir.str(name);
            save_image(path, img);
            ImageTensor back = load_image(path);
            REQUIRE(back.height == img.height);
            REQUIRE(back.width == img.width);
            REQUIRE(back.channels == img.channels);
            // Quantization bound: round(v*255)/255 within half a bin.
            for (size_t i = 0; i < img.data.size(); ++i)
                CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 255.0f + 1e-6f);
            // Quantized values reload bit-exactly.
            std::string path2 = dir.str("again_" + name);
            save_image(path2, back);
            CHECK(read_file(path) == read_file(path2));
        }
    }
}

TEST_CASE("image io errors") {
    testutil::ScratchDir dir("ioerr");
    CHECK_THROWS_AS(load_image(dir.str("missing.png")), UsageError);
    std::ofstream(dir.str("junk.png"), std::ios::binary) << "not an image";
    CHECK_THROWS_AS(load_image(dir.str("junk.png")), UsageError);
    ImageTensor img(4, 4, 3, 0.5f);
    CHECK_THROWS_AS(save_image(dir.str("bad.jpg"), img), UsageError);
    // P6 is 3-channel; P5 is 1-channel.
    CHECK_THROWS_AS(save_image(dir.str("bad.pgm"), img), UsageError);
}

TEST_CASE("degradation identity and analytic values") {
    ImageTensor img = testutil::textured_image(16, 16, 3, 5);
    DegradationParams ident;
    ident.gamma = 1.0;
    ident.gain = 1.0;
    ident.noise_sigma = 0.0;
    ImageTensor same = synthesize_low_light(img, ident, 1);
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(same.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));

    ImageTensor half(8, 8, 3, 0.5f);
    DegradationParams p;
    p.gamma = 2.0;
    p.gain = 0.5;
    p.noise_sigma = 0.0;
    ImageTensor out = synthesize_low_light(half, p, 1);
    for (float v : out.data) CHECK(v == doctest::Approx(0.125).epsilon(1e-6));
}

TEST_CASE("degradation determinism, clamping, and level ordering") {
    ImageTensor img = testutil::textured_image(32, 32, 3, 8);
    DegradationParams p = degradation_preset(LightLevel::moderate);
    ImageTensor a = synthesize_low_light(img, p, 123);
    ImageTensor b = synthesize_low_light(img, p, 123);
    CHECK(a.data == b.data);
    ImageTensor c = synthesize_low_light(img, p, 124);
    CHECK(a.data != c.data);
    for (float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        CHECK(std::isfinite(v));
    }

    validate_level_ordering(degradation_preset(LightLevel::light),
                            degradation_preset(LightLevel::moderate),
                            degradation_preset(LightLevel::dense));

    // dense < moderate < light < original mean luminance on a 20-image corpus.
    for (int i = 0; i < 20; ++i) {
        ImageTensor src = testutil::textured_image(32, 32, 3, 900 + i);
        double m_src = mean_of(src);
        double m_light =
            mean_of(synthesize_low_light(src, degradation_preset(LightLevel::light), 42));
        double m_mod =
            mean_of(synthesize_low_light(src, degradation_preset(LightLevel::moderate), 42));
        double m_dense =
            mean_of(synthesize_low_light(src, degradation_preset(LightLevel::dense), 42));
        CHECK(m_dense < m_mod);
        CHECK(m_mod < m_light);
        CHECK(m_light < m_src);
    }
}

TEST_CASE("patch extraction") {
    ImageTensor exact = testutil::textured_image(32, 32, 3, 21);
    auto single = extract_patches(exact, 32, 1, 9);
    REQUIRE(single.size() == 1);
    CHECK(single[0].data == exact.data);

    ImageTensor img = testutil::textured_image(48, 40, 3, 22);
    auto p1 = extract_patches(img, 16, 4, 77);
    auto p2 = extract_patches(img, 16, 4, 77);
    REQUIRE(p1.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(p1[i].height == 16);
        CHECK(p1[i].width == 16);
        CHECK(p1[i].data == p2[i].data);
    }

    // Undersized input: reflect-pad, still size x size, border mirrors rows.
    ImageTensor small = testutil::textured_image(10, 12, 1, 23);
    auto padded = extract_patches(small, 16, 2, 5);
    REQUIRE(padded.size() == 2);
    CHECK(padded[0].height == 16);
    CHECK(padded[0].width == 16);
    ImageTensor rp = reflect_pad(small, 16, 16);
    CHECK(rp.height == 16);
    CHECK(rp.width == 16);
    // Reflection: row h..(pad) mirrors row h-2 downward.
    for (int x = 0; x < small.width; ++x)
        CHECK(rp.at(10, x, 0) == small.at(8, x, 0));
    for (int y = 0; y < small.height; ++y)
        CHECK(rp.at(y, 12, 0) == small.at(y, 10, 0));

    CHECK_THROWS_AS(extract_patches(img, 16, 0, 1), UsageError);
    CHECK_THROWS_AS(extract_patches(img, 4, 1, 1), UsageError);

    // Paired crops align pixel-for-pixel.
    ImageTensor low = testutil::textured_image(40, 40, 3, 24);
    ImageTensor high = low;
    for (float& v : high.data) v = std::min(1.0f, v + 0.1f);
    auto pairs = extract_patches_paired(low, high, 16, 3, 55);
    REQUIRE(pairs.size() == 3);
    for (const auto& [pl, ph] : pairs)
        for (size_t i = 0; i < pl.data.size(); ++i)
            CHECK(ph.data[i] == doctest::Approx(std::min(1.0f, pl.data[i] + 0.1f)).epsilon(1e-6));
}

TEST_CASE("manifest build, splits, round trip, validation") {
    testutil::ScratchDir dir("manifest");
    namespace fs = std::filesystem;
    fs::create_directories(dir.str("high"));
    fs::create_directories(dir.str("moderate"));
    for (int i = 0; i < 10; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img%02d.ppm", i);
        ImageTensor img = testutil::textured_image(16, 16, 3, 300 + i);
        save_image(dir.str("high") + "/" + name, img);
        save_image(dir.str("moderate") + "/" + name,
                   synthesize_low_light(img, degradation_preset(LightLevel::moderate), 42));
    }

    DatasetManifest m = build_manifest(dir.str(), 0.8, 0.2);
    validate_manifest(m);
    int train = 0, val = 0, test = 0;
    for (const auto& e : m.entries) {
        if (e.split == Split::train) ++train;
        if (e.split == Split::val) ++val;
        if (e.split == Split::test) ++test;
        CHECK(e.level.has_value());
        CHECK(e.high.has_value());
    }
    CHECK(train == 8);
    CHECK(val == 2);
    CHECK(test == 0);

    DatasetManifest m2 = build_manifest(dir.str(), 0.7, 0.2);
    int train2 = 0, val2 = 0, test2 = 0;
    for (const auto& e : m2.entries) {
        if (e.split == Split::train) ++train2;
        if (e.split == Split::val) ++val2;
        if (e.split == Split::test) ++test2;
    }
    CHECK(train2 == 7);
    CHECK(val2 == 2);
    CHECK(test2 == 1);

    // Deterministic writing: byte-identical on re-save.
    save_manifest(m, dir.str("m1.json"));
    save_manifest(m, dir.str("m2.json"));
    CHECK(read_file(dir.str("m1.json")) == read_file(dir.str("m2.json")));

    DatasetManifest loaded = load_manifest(dir.str("m1.json"));
    REQUIRE(loaded.entries.size() == m.entries.size());
    for (size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(loaded.entries[i].low == m.entries[i].low);
        CHECK(loaded.entries[i].high == m.entries[i].high);
        CHECK(loaded.entries[i].split == m.entries[i].split);
        CHECK(loaded.entries[i].level == m.entries[i].level);
    }

    // Train entries must be paired: breaking that fails validation.
    DatasetManifest bad = m;
    bad.entries[0].high.reset();
    CHECK_THROWS_AS(validate_manifest(bad), UsageError);

    testutil::ScratchDir empty("manifest_empty");
    CHECK_THROWS_AS(build_manifest(empty.str(), 0.8, 0.2), UsageError);
}
