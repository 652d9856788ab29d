// trifuse: command-line surface for synthesis, training, enhancement,
// evaluation, and ablation. Exit codes: 0 success, 2 usage/config error,
// 1 internal error.

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "trifuse/common.hpp"
#include "trifuse/config.hpp"
#include "trifuse/image_io.hpp"
#include "trifuse/manifest.hpp"
#include "trifuse/metrics.hpp"
#include "trifuse/nss.hpp"
#include "trifuse/pipeline.hpp"
#include "trifuse/synth.hpp"

namespace fs = std::filesystem;
using namespace trifuse;

namespace {

std::vector<std::string> list_images_sorted(const fs::path& dir) {
    require(fs::is_directory(dir), "not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_file(e.path().filename().string()))
            names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

RunConfig config_from(const std::string& config_path) {
    return config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
}

// ---------------------------------------------------------------- synth ---

struct SynthOpts {
    std::string input, out, level = "all", config;
    std::uint64_t seed = 0;
    double train_frac = 0.7, val_frac = 0.15;
};

void run_synth(const SynthOpts& o, bool seed_given) {
    RunConfig cfg = config_from(o.config);
    if (seed_given) cfg.seed = o.seed;
    cfg.validate();

    require(fs::exists(o.input), "input directory does not exist: " + o.input);
    std::vector<std::string> names = list_images_sorted(o.input);
    require(!names.empty(), "no images found in " + o.input);
    require(o.train_frac >= 0.0 && o.val_frac >= 0.0 && o.train_frac + o.val_frac <= 1.0,
            "train/val fractions must be non-negative and sum to at most 1");

    std::vector<LightLevel> levels;
    if (o.level == "all")
        levels = {LightLevel::light, LightLevel::moderate, LightLevel::dense};
    else
        levels = {light_level_from_string(o.level)};

    fs::create_directories(fs::path(o.out) / "high");
    for (LightLevel lv : levels) fs::create_directories(fs::path(o.out) / to_string(lv));

    Rng seeder(cfg.seed);
    int written = 0;
    for (const std::string& name : names) {
        ImageTensor img = load_image((fs::path(o.input) / name).string());
        save_image((fs::path(o.out) / "high" / name).string(), img);
        for (LightLevel lv : levels) {
            // Per-(image, level) substream so adding images or levels never
            // shifts another output's noise.
            std::uint64_t s =
                seeder.stream(std::string(to_string(lv)) + "/" + name).next_u64();
            ImageTensor low = synthesize_low_light(img, cfg.preset(lv), s);
            save_image((fs::path(o.out) / to_string(lv) / name).string(), low);
            ++written;
        }
    }

    DatasetManifest m = build_manifest(o.out, o.train_frac, o.val_frac);
    validate_manifest(m);
    std::string manifest_path = (fs::path(o.out) / "manifest.json").string();
    save_manifest(m, manifest_path);
    std::printf("wrote %d degraded images (%zu levels x %zu inputs) under %s\n", written,
                levels.size(), names.size(), o.out.c_str());
    std::printf("manifest: %s (%zu entries)\n", manifest_path.c_str(), m.entries.size());
}

// ---------------------------------------------------------------- train ---

struct TrainOpts {
    std::string manifest, config, out;
    int iters = 0;
    std::uint64_t seed = 0;
    int batch = 0, patch = 0, k = 0;
    double lr = 0.0;
};

void run_train(const TrainOpts& o, const CLI::App* sub) {
    RunConfig cfg = config_from(o.config);
    if (sub->count("--iters")) cfg.iters = o.iters;
    if (sub->count("--seed")) cfg.seed = o.seed;
    if (sub->count("--batch")) cfg.batch = o.batch;
    if (sub->count("--patch")) cfg.patch = o.patch;
    if (sub->count("--k")) cfg.k = o.k;
    if (sub->count("--lr")) cfg.lr = o.lr;
    cfg.validate();

    DatasetManifest m = load_manifest(o.manifest);
    validate_manifest(m);
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    train_model(m, cfg, o.out, o.out + ".loss.csv", std::cout);
    std::printf("wrote checkpoint %s\n", o.out.c_str());
}

// -------------------------------------------------------------- enhance ---

struct EnhanceOpts {
    std::string ckpt, input, output;
    int steps = 5;
    double eta = 0.0;
    std::uint64_t seed = 42;
};

void run_enhance(const EnhanceOpts& o) {
    LoadedModel model = load_model(o.ckpt);
    EnhanceOptions opt;
    opt.S = o.steps;
    opt.eta = o.eta;
    opt.seed = o.seed;

    auto enhance_one = [&](LoadedModel& mdl, const fs::path& in,
                           const fs::path& out_path) -> double {
        ImageTensor low = load_image(in.string());
        auto start = std::chrono::steady_clock::now();
        ImageTensor out = enhance(low, mdl, opt);
        std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        save_image(out_path.string(), out);
        return dt.count();
    };

    if (fs::is_directory(o.input)) {
        std::vector<std::string> names = list_images_sorted(o.input);
        require(!names.empty(), "no images found in " + o.input);
        fs::create_directories(o.output);
        std::vector<double> secs(names.size(), 0.0);
        const int workers =
            std::max(1, std::min<int>(thread_cap(), static_cast<int>(names.size())));
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        std::mutex err_mu;
        std::optional<std::string> first_error;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                LoadedModel local = model;  // thread-private parameter copy
                for (size_t i = next.fetch_add(1); i < names.size(); i = next.fetch_add(1)) {
                    try {
                        fs::path out_name = fs::path(names[i]).stem().string() + ".png";
                        secs[i] = enhance_one(local, fs::path(o.input) / names[i],
                                              fs::path(o.output) / out_name);
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lock(err_mu);
                        if (!first_error) first_error = names[i] + ": " + e.what();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (first_error) throw UsageError(*first_error);
        for (size_t i = 0; i < names.size(); ++i)
            std::printf("enhanced %s in %.3f s\n", names[i].c_str(), secs[i]);
    } else {
        require(fs::exists(o.input), "input does not exist: " + o.input);
        double s = enhance_one(model, o.input, o.output);
        std::printf("enhanced %s in %.3f s\n", o.input.c_str(), s);
    }
}

// ----------------------------------------------------------------- eval ---

struct EvalOpts {
    std::string pred, ref, metrics = "psnr,ssim,ms_ssim,mse,mae", out;
    std::string niqe_model, brisque_regressor, fit_niqe_from;
    int niqe_patch = 32;
};

std::vector<std::string> parse_metric_list(const std::string& list) {
    static const std::vector<std::string> canonical = {"psnr", "ssim", "ms_ssim", "mse",
                                                       "mae",  "brisque", "niqe"};
    std::set<std::string> seen;
    std::string item;
    std::stringstream ss(list);
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        require(std::find(canonical.begin(), canonical.end(), item) != canonical.end(),
                "unknown metric \"" + item + "\" (choose from psnr,ssim,ms_ssim,mse,mae,"
                "brisque,niqe)");
        seen.insert(item);
    }
    require(!seen.empty(), "empty metric list");
    std::vector<std::string> ordered;  // CSV columns keep the canonical order
    for (const std::string& c : canonical)
        if (seen.count(c)) ordered.push_back(c);
    return ordered;
}

void run_eval(const EvalOpts& o) {
    std::vector<std::string> metrics = parse_metric_list(o.metrics);
    auto wants = [&](const char* name) {
        return std::find(metrics.begin(), metrics.end(), name) != metrics.end();
    };
    const bool need_ref =
        wants("psnr") || wants("ssim") || wants("ms_ssim") || wants("mse") || wants("mae");
    require(!need_ref || !o.ref.empty(),
            "full-reference metrics need --ref (or request only brisque/niqe)");

    std::optional<NiqeModel> niqe_model;
    if (!o.fit_niqe_from.empty()) {
        std::vector<std::string> names = list_images_sorted(o.fit_niqe_from);
        std::vector<ImageTensor> pristine;
        pristine.reserve(names.size());
        for (const std::string& n : names)
            pristine.push_back(load_image((fs::path(o.fit_niqe_from) / n).string()));
        niqe_model = fit_niqe_model(pristine, o.niqe_patch);
        if (!o.niqe_model.empty()) save_niqe_model(o.niqe_model, *niqe_model);
    } else if (!o.niqe_model.empty()) {
        niqe_model = load_niqe_model(o.niqe_model);
    }
    require(!wants("niqe") || niqe_model.has_value(),
            "niqe needs --niqe-model FILE or --fit-niqe-from DIR");

    std::optional<BrisqueRegressor> reg;
    if (!o.brisque_regressor.empty()) reg = load_brisque_regressor(o.brisque_regressor);
    require(!wants("brisque") || reg.has_value() || niqe_model.has_value(),
            "brisque needs --brisque-regressor, or a pristine model "
            "(--niqe-model / --fit-niqe-from) for the distance fallback");

    std::vector<std::string> names = list_images_sorted(o.pred);
    require(!names.empty(), "no images found in " + o.pred);
    // Pairing is by stem so that .png outputs match .ppm/.pgm references.
    std::map<std::string, std::string> ref_by_stem;
    if (need_ref) {
        for (const std::string& r : list_images_sorted(o.ref)) {
            std::string stem = fs::path(r).stem().string();
            require(ref_by_stem.emplace(stem, r).second,
                    "reference directory has duplicate stem \"" + stem + "\"");
        }
        std::vector<std::string> missing;
        for (const std::string& n : names)
            if (!ref_by_stem.count(fs::path(n).stem().string())) missing.push_back(n);
        if (!missing.empty()) {
            std::string joined;
            for (const std::string& n : missing) joined += (joined.empty() ? "" : ", ") + n;
            throw UsageError("reference images missing for: " + joined);
        }
    }

    MetricReport report;
    report.metric_names = metrics;
    for (const std::string& name : names) {
        ImageTensor pred = load_image((fs::path(o.pred) / name).string());
        std::optional<ImageTensor> ref;
        if (need_ref)
            ref = load_image(
                (fs::path(o.ref) / ref_by_stem.at(fs::path(name).stem().string())).string());
        std::map<std::string, double> row;
        for (const std::string& m : metrics) {
            if (m == "psnr") row[m] = psnr(pred, *ref);
            else if (m == "ssim") row[m] = ssim(pred, *ref);
            else if (m == "ms_ssim") row[m] = ms_ssim(pred, *ref);
            else if (m == "mse") row[m] = mse(pred, *ref);
            else if (m == "mae") row[m] = mae(pred, *ref);
            else if (m == "brisque")
                row[m] = brisque_score(pred, reg ? &*reg : nullptr,
                                       niqe_model ? &*niqe_model : nullptr);
            else
                row[m] = niqe(pred, *niqe_model);
        }
        report.add(name, row);
    }
    report.finalize();
    std::string csv = report_to_csv(report);
    std::fputs(csv.c_str(), stdout);
    if (!o.out.empty()) {
        if (fs::path(o.out).has_parent_path())
            fs::create_directories(fs::path(o.out).parent_path());
        std::ofstream f(o.out, std::ios::binary);
        require(f.good(), "cannot open output CSV " + o.out);
        f << csv;
    }
}

// --------------------------------------------------------------- ablate ---

struct AblateOpts {
    std::string manifest, config, axis, out;
    std::uint64_t seed = 0;
    int iters = 0;
};

struct AblationRow {
    std::string variant;
    double psnr_mean = 0.0, ssim_mean = 0.0;
};

AblationRow evaluate_variant(const std::string& variant, LoadedModel& model,
                             const EnhanceOptions& opt, const DatasetManifest& m,
                             const std::vector<size_t>& eval_idx) {
    AblationRow row;
    row.variant = variant;
    for (size_t idx : eval_idx) {
        const ManifestEntry& e = m.entries[idx];
        ImageTensor low = load_image((fs::path(m.root) / e.low).string());
        ImageTensor ref = load_image((fs::path(m.root) / *e.high).string());
        ImageTensor out = enhance(low, model, opt);
        row.psnr_mean += psnr(out, ref);
        row.ssim_mean += ssim(out, ref);
    }
    row.psnr_mean /= static_cast<double>(eval_idx.size());
    row.ssim_mean /= static_cast<double>(eval_idx.size());
    return row;
}

void run_ablate(const AblateOpts& o, const CLI::App* sub) {
    require(o.axis == "k" || o.axis == "steps" || o.axis == "components",
            "unknown axis \"" + o.axis + "\" (choose k, steps, or components)");
    RunConfig cfg = config_from(o.config);
    if (sub->count("--seed")) cfg.seed = o.seed;
    if (sub->count("--iters")) cfg.iters = o.iters;
    cfg.validate();

    DatasetManifest m = load_manifest(o.manifest);
    validate_manifest(m);
    // Paired val split; falls back to the train split when the manifest has
    // no val images.
    std::vector<size_t> eval_idx;
    for (size_t i = 0; i < m.entries.size(); ++i)
        if (m.entries[i].split == Split::val && m.entries[i].high) eval_idx.push_back(i);
    if (eval_idx.empty()) {
        for (size_t i = 0; i < m.entries.size(); ++i)
            if (m.entries[i].split == Split::train && m.entries[i].high) eval_idx.push_back(i);
        std::puts("note: no paired val images; evaluating on the train split");
    }
    require(!eval_idx.empty(), "manifest has no paired images to evaluate");

    fs::create_directories(o.out);
    std::vector<AblationRow> rows;
    auto train_to = [&](const RunConfig& c, const std::string& name) {
        std::string ckpt = (fs::path(o.out) / name).string();
        train_model(m, c, ckpt, ckpt + ".loss.csv", std::cout);
        return load_model(ckpt);
    };
    EnhanceOptions opt;
    opt.S = cfg.S;
    opt.eta = cfg.eta;
    opt.seed = cfg.seed;

    if (o.axis == "k") {
        for (int k : {1, 2, 3}) {
            RunConfig c = cfg;
            c.k = k;
            c.validate();
            LoadedModel model = train_to(c, "k" + std::to_string(k) + ".ckpt");
            rows.push_back(
                evaluate_variant("k=" + std::to_string(k), model, opt, m, eval_idx));
        }
    } else if (o.axis == "steps") {
        LoadedModel model = train_to(cfg, "base.ckpt");
        for (int S : {5, 10, 15}) {
            EnhanceOptions v = opt;
            v.S = S;
            rows.push_back(
                evaluate_variant("S=" + std::to_string(S), model, v, m, eval_idx));
        }
    } else {
        LoadedModel model = train_to(cfg, "base.ckpt");
        for (const auto& [variant, use_cnm, use_esm] :
             {std::tuple<const char*, bool, bool>{"full", true, true},
              {"no-ESM", true, false},
              {"no-CNM", false, true}}) {
            EnhanceOptions v = opt;
            v.use_cnm = use_cnm;
            v.use_esm = use_esm;
            rows.push_back(evaluate_variant(variant, model, v, m, eval_idx));
        }
    }

    std::string csv = "variant,psnr,ssim\n";
    char buf[160];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", r.variant.c_str(), r.psnr_mean,
                      r.ssim_mean);
        csv += buf;
    }
    std::string csv_path = (fs::path(o.out) / "ablation.csv").string();
    std::ofstream f(csv_path, std::ios::binary);
    require(f.good(), "cannot open output CSV " + csv_path);
    f << csv;
    f.close();
    std::fputs(csv.c_str(), stdout);
    std::printf("wrote %s\n", csv_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trifuse: wavelet-diffusion low-light image enhancement"};
    app.require_subcommand(1);

    SynthOpts so;
    CLI::App* synth = app.add_subcommand(
        "synth", "Generate degraded low-light copies of a directory of images plus a manifest");
    synth->add_option("--input", so.input, "Directory of well-exposed source images")
        ->required();
    synth->add_option("--out", so.out, "Output dataset root (high/ + one dir per level)")
        ->required();
    synth->add_option("--level", so.level, "Degradation level: light, moderate, dense, or all")
        ->default_val("all")
        ->check(CLI::IsMember({"light", "moderate", "dense", "all"}));
    synth->add_option("--seed", so.seed, "Random seed (default 42, or the config file's seed)");
    synth->add_option("--config", so.config, "Run-config file (flat key = value)");
    synth->add_option("--train-frac", so.train_frac, "Fraction of images assigned to train")
        ->default_val(0.7);
    synth->add_option("--val-frac", so.val_frac, "Fraction of images assigned to val")
        ->default_val(0.15);
    synth->callback([&] { run_synth(so, synth->count("--seed") > 0); });

    TrainOpts to;
    CLI::App* train = app.add_subcommand("train", "Train the noise predictor on a manifest");
    train->add_option("--manifest", to.manifest, "Dataset manifest JSON")->required();
    train->add_option("--config", to.config, "Run-config file (flat key = value)");
    train->add_option("--out", to.out, "Output checkpoint path")->required();
    train->add_option("--iters", to.iters, "Training iterations (default 500)");
    train->add_option("--seed", to.seed, "Random seed (default 42)");
    train->add_option("--batch", to.batch, "Patch batch size (default 4)");
    train->add_option("--patch", to.patch, "Square patch size (default 64)");
    train->add_option("--k", to.k, "Wavelet levels 1-3 (default 1)");
    train->add_option("--lr", to.lr, "Adam learning rate (default 2e-3)");
    train->callback([&] { run_train(to, train); });

    EnhanceOpts eo;
    CLI::App* enh = app.add_subcommand("enhance", "Enhance one image or a directory of images");
    enh->add_option("--ckpt", eo.ckpt, "Checkpoint file")->required();
    enh->add_option("--input", eo.input, "Input image or directory")->required();
    enh->add_option("--output", eo.output, "Output image or directory")->required();
    enh->add_option("--steps", eo.steps, "Implicit sampling steps S")->default_val(5);
    enh->add_option("--eta", eo.eta, "Stochasticity in [0,1]; 0 is deterministic")
        ->default_val(0.0);
    enh->add_option("--seed", eo.seed, "Random seed for the initial latent")->default_val(42);
    enh->callback([&] { run_enhance(eo); });

    EvalOpts vo;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score a directory of images into a CSV");
    eval_cmd->add_option("--pred", vo.pred, "Directory of images to score")->required();
    eval_cmd->add_option("--ref", vo.ref,
                         "Reference directory (needed for psnr/ssim/ms_ssim/mse/mae)");
    eval_cmd
        ->add_option("--metrics", vo.metrics,
                     "Comma list from psnr,ssim,ms_ssim,mse,mae,brisque,niqe")
        ->default_val("psnr,ssim,ms_ssim,mse,mae");
    eval_cmd->add_option("--niqe-model", vo.niqe_model,
                         "Pristine NIQE model file (also the brisque fallback)");
    eval_cmd->add_option("--brisque-regressor", vo.brisque_regressor,
                         "Linear brisque regressor file (reg_w, reg_b entries)");
    eval_cmd->add_option("--fit-niqe-from", vo.fit_niqe_from,
                         "Fit the pristine model from this directory (>= 10 images); saved to "
                         "--niqe-model when both are given");
    eval_cmd->add_option("--niqe-patch", vo.niqe_patch, "Patch size used when fitting")
        ->default_val(32);
    eval_cmd->add_option("--out", vo.out, "Write the CSV here as well as stdout");
    eval_cmd->callback([&] { run_eval(vo); });

    AblateOpts ao;
    CLI::App* ablate =
        app.add_subcommand("ablate", "Train/evaluate an ablation matrix on the toy recipe");
    ablate->add_option("--manifest", ao.manifest, "Dataset manifest JSON")->required();
    ablate->add_option("--config", ao.config, "Run-config file (flat key = value)");
    ablate->add_option("--axis", ao.axis, "Ablation axis: k, steps, or components")->required();
    ablate->add_option("--out", ao.out, "Output directory for checkpoints and ablation.csv")
        ->required();
    ablate->add_option("--seed", ao.seed, "Random seed (default 42)");
    ablate->add_option("--iters", ao.iters, "Training iterations per variant (default 500)");
    ablate->callback([&] { run_ablate(ao, ablate); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);  // prints help or the parse error
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
