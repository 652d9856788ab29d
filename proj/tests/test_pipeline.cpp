// Training and enhancement pipeline: checkpoint round trips, the training
// loop's determinism and artifacts, and the enhance path including padding,
// seeding, and the ablation switches.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trifuse/checkpoint.hpp"
#include "trifuse/common.hpp"
#include "trifuse/config.hpp"
#include "trifuse/image_io.hpp"
#include "trifuse/manifest.hpp"
#include "trifuse/pipeline.hpp"
#include "trifuse/rng.hpp"

#include "test_util.hpp"

using namespace trifuse;

namespace {

ModelConfig small_model_config() {
    ModelConfig cfg;
    cfg.cnm = {8, 1, 2, 8};
    cfg.esm.block_channels = 4;
    cfg.esm.dilations = {1};
    return cfg;
}

RunConfig small_run_config() {
    RunConfig cfg;
    cfg.cnm_base_channels = 8;
    cfg.cnm_blocks = 1;
    cfg.cnm_heads = 2;
    cfg.cnm_temb_dim = 8;
    cfg.esm_channels = 4;
    cfg.esm_dilations = "1";
    cfg.batch = 2;
    cfg.patch = 16;
    cfg.iters = 4;
    cfg.log_every = 2;
    return cfg;
}

// Paired scratch dataset: textured references with darkened copies.
DatasetManifest scratch_dataset(const testutil::ScratchDir& dir, int count,
                                int odd_size_index = -1) {
    namespace fs = std::filesystem;
    fs::create_directories(dir.path() / "high");
    fs::create_directories(dir.path() / "low");
    DatasetManifest m;
    m.root = dir.str();
    for (int i = 0; i < count; ++i) {
        const int h = i == odd_size_index ? 12 : 24;
        const int w = i == odd_size_index ? 20 : 24;
        const ImageTensor high = testutil::textured_image(h, w, 3, 500 + static_cast<uint64_t>(i));
        ImageTensor low = high;
        for (float& v : low.data) v *= 0.35f;
        const std::string name = "img" + std::to_string(i) + ".png";
        save_image(dir.str("high/" + name), high);
        save_image(dir.str("low/" + name), low);
        ManifestEntry e;
        e.low = "low/" + name;
        e.high = "high/" + name;
        e.split = Split::train;
        e.level = LightLevel::moderate;
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

size_t line_count(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    size_t n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

}  // namespace

TEST_CASE("checkpoint save/load round trip") {
    testutil::ScratchDir dir("pipe_ckpt");
    const ModelConfig cfg = small_model_config();
    const ParamBank bank = init_params<float>(cfg, 11);

    const std::string p1 = dir.str("model.ckpt");
    const std::string p2 = dir.str("model2.ckpt");
    save_model(p1, cfg, bank);

    LoadedModel m = load_model(p1);
    CHECK(m.cfg.to_json() == cfg.to_json());
    REQUIRE(m.bank.entries.size() == bank.entries.size());
    for (const auto& [name, e] : bank.entries) {
        CHECK(m.bank.at(name).data == e.value.data);
        CHECK(m.bank.entries.at(name).trainable == e.trainable);
    }

    save_model(p2, m.cfg, m.bank);
    CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("checkpoint validation rejects malformed files") {
    testutil::ScratchDir dir("pipe_ckpt_bad");
    const ModelConfig cfg = small_model_config();
    const ParamBank bank = init_params<float>(cfg, 13);
    const std::string good = dir.str("good.ckpt");
    save_model(good, cfg, bank);
    const ContainerEntries entries = load_container(good);

    auto save_filtered = [&](const std::string& path, auto keep, bool add_extra = false) {
        ContainerEntries out;
        for (const auto& [name, e] : entries)
            if (keep(name)) out.emplace_back(name, e);
        if (add_extra) out.emplace_back("bogus.extra", ContainerEntry{{1}, {0.0f}});
        save_container(path, out);
    };

    SUBCASE("missing parameter entry") {
        const std::string p = dir.str("missing.ckpt");
        save_filtered(p, [](const std::string& n) { return n != "cnm.enc0.w"; });
        try {
            load_model(p);
            FAIL("expected UsageError");
        } catch (const UsageError& e) {
            CHECK(std::string(e.what()).find("cnm.enc0.w") != std::string::npos);
        }
    }
    SUBCASE("unexpected extra entry") {
        const std::string p = dir.str("extra.ckpt");
        save_filtered(p, [](const std::string&) { return true; }, true);
        CHECK_THROWS_AS(load_model(p), UsageError);
    }
    SUBCASE("parameter shape mismatch") {
        ContainerEntries mutated = entries;
        for (auto& [name, e] : mutated) {
            if (name == "cnm.enc0.b") {
                std::swap(e.dims[2], e.dims[3]);  // same payload, wrong shape
                break;
            }
        }
        const std::string p = dir.str("shape.ckpt");
        save_container(p, mutated);
        CHECK_THROWS_AS(load_model(p), UsageError);
    }
    SUBCASE("missing architecture config") {
        const std::string p = dir.str("nocfg.ckpt");
        save_filtered(p, [](const std::string& n) { return n != "__config__"; });
        CHECK_THROWS_AS(load_model(p), UsageError);
    }
}

TEST_CASE("training loop artifacts and determinism") {
    testutil::ScratchDir dir("pipe_train");
    const DatasetManifest manifest = scratch_dataset(dir, 3, /*odd_size_index=*/2);
    const RunConfig cfg = small_run_config();

    SUBCASE("losses are finite and the artifacts are written") {
        std::ostringstream log;
        const std::string ckpt = dir.str("run.ckpt");
        const std::string csv = dir.str("run.loss.csv");
        const TrainStats stats = train_model(manifest, cfg, ckpt, csv, log);

        REQUIRE(stats.losses.size() == static_cast<size_t>(cfg.iters));
        for (double l : stats.losses) {
            CHECK(std::isfinite(l));
            CHECK(l > 0.0);
        }
        CHECK(line_count(csv) == static_cast<size_t>(cfg.iters) + 1);
        CHECK(log.str().find("iter 2") != std::string::npos);
        CHECK(log.str().find("iter 4") != std::string::npos);

        const LoadedModel m = load_model(ckpt);
        CHECK(m.cfg.to_json() == cfg.to_model_config().to_json());
    }
    SUBCASE("identical seeds give identical losses and checkpoints") {
        std::ostringstream log1, log2;
        const std::string c1 = dir.str("a.ckpt"), c2 = dir.str("b.ckpt");
        const TrainStats s1 = train_model(manifest, cfg, c1, dir.str("a.csv"), log1);
        const TrainStats s2 = train_model(manifest, cfg, c2, dir.str("b.csv"), log2);
        CHECK(s1.losses == s2.losses);
        CHECK(read_bytes(c1) == read_bytes(c2));
        CHECK(read_bytes(dir.str("a.csv")) == read_bytes(dir.str("b.csv")));

        RunConfig other = cfg;
        other.seed = 43;
        std::ostringstream log3;
        const TrainStats s3 = train_model(manifest, other, dir.str("c.ckpt"), dir.str("c.csv"),
                                          log3);
        CHECK(s1.losses != s3.losses);
    }
    SUBCASE("zero iterations still writes a loadable fresh checkpoint") {
        RunConfig zero = cfg;
        zero.iters = 0;
        std::ostringstream log;
        const std::string ckpt = dir.str("zero.ckpt");
        const TrainStats stats = train_model(manifest, zero, ckpt, dir.str("zero.csv"), log);
        CHECK(stats.losses.empty());

        const LoadedModel m = load_model(ckpt);
        const ParamBank fresh = init_params<float>(zero.to_model_config(), zero.seed);
        for (const auto& [name, e] : fresh.entries) CHECK(m.bank.at(name).data == e.value.data);
    }
    SUBCASE("a manifest without paired train entries is rejected") {
        DatasetManifest empty;
        empty.root = dir.str();
        ManifestEntry e;
        e.low = "low/img0.png";
        e.split = Split::test;
        empty.entries.push_back(e);
        std::ostringstream log;
        CHECK_THROWS_AS(train_model(empty, cfg, dir.str("x.ckpt"), dir.str("x.csv"), log),
                        UsageError);
    }
}

TEST_CASE("enhance: shapes, padding, and determinism") {
    const ModelConfig cfg = small_model_config();
    LoadedModel model{cfg, init_params<float>(cfg, 21)};

    SUBCASE("output matches the input shape and stays in range") {
        // 24x20 exercises the pad-to-multiple-of-8 path; 17x19 both odd.
        for (auto [h, w] : std::vector<std::pair<int, int>>{{24, 24}, {24, 20}, {17, 19}}) {
            const ImageTensor low = testutil::textured_image(h, w, 3, 600);
            const ImageTensor out = enhance(low, model, EnhanceOptions{});
            CHECK(out.height == h);
            CHECK(out.width == w);
            CHECK(out.channels == 3);
            for (float v : out.data) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
        }
    }
    SUBCASE("same seed is bit-identical, different seed differs") {
        const ImageTensor low = testutil::textured_image(24, 24, 3, 601);
        for (double eta : {0.0, 0.5}) {
            EnhanceOptions opt;
            opt.eta = eta;
            opt.seed = 7;
            const ImageTensor a = enhance(low, model, opt);
            const ImageTensor b = enhance(low, model, opt);
            CHECK(a.data == b.data);
            opt.seed = 8;
            const ImageTensor c = enhance(low, model, opt);
            CHECK(a.data != c.data);
        }
    }
    SUBCASE("the ablation switches engage cleanly") {
        const ImageTensor low = testutil::textured_image(24, 24, 3, 602);
        EnhanceOptions full;
        EnhanceOptions no_cnm;
        no_cnm.use_cnm = false;
        EnhanceOptions no_esm;
        no_esm.use_esm = false;

        // A zero-initialized CNM head predicts exactly zero noise, so the
        // untrained full path and the no-CNM path coincide bitwise.
        const ImageTensor a = enhance(low, model, full);
        const ImageTensor b = enhance(low, model, no_cnm);
        CHECK(a.data == b.data);

        const ImageTensor c = enhance(low, model, no_esm);
        CHECK(c.height == low.height);
        for (float v : c.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    SUBCASE("argument validation") {
        const ImageTensor low = testutil::textured_image(24, 24, 3, 603);
        const ImageTensor gray = testutil::textured_image(24, 24, 1, 603);
        EnhanceOptions opt;
        CHECK_THROWS_AS(enhance(gray, model, opt), UsageError);

        opt.S = 0;
        CHECK_THROWS_AS(enhance(low, model, opt), UsageError);
        opt.S = cfg.T + 1;
        CHECK_THROWS_AS(enhance(low, model, opt), UsageError);

        opt = EnhanceOptions{};
        opt.eta = -0.1;
        CHECK_THROWS_AS(enhance(low, model, opt), UsageError);
        opt.eta = 1.5;
        CHECK_THROWS_AS(enhance(low, model, opt), UsageError);

        const ImageTensor tiny = testutil::textured_image(6, 40, 3, 604);
        CHECK_THROWS_AS(enhance(tiny, model, EnhanceOptions{}), UsageError);
    }
}
