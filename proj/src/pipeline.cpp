#include "trifuse/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "trifuse/adam.hpp"
#include "trifuse/autodiff.hpp"
#include "trifuse/checkpoint.hpp"
#include "trifuse/image_io.hpp"
#include "trifuse/schedule.hpp"
#include "trifuse/wavelet.hpp"

namespace trifuse {

namespace {

// Affine map between the approximation range [0, 2^k] and the diffusion
// domain [-1, 1].
Tensor map_to_unit(const Tensor& a, int k) {
    Tensor out = a;
    const float s = std::ldexp(1.0f, 1 - k);
    for (float& v : out.data) v = v * s - 1.0f;
    return out;
}

Tensor map_from_unit(const Tensor& x, int k) {
    Tensor out = x;
    const float s = std::ldexp(1.0f, k - 1);
    for (float& v : out.data) v = (v + 1.0f) * s;
    return out;
}

ImageTensor pad_to_at_least(const ImageTensor& img, int min_h, int min_w) {
    if (img.height >= min_h && img.width >= min_w) return img;
    return reflect_pad(img, 0, std::max(0, min_h - img.height), 0,
                       std::max(0, min_w - img.width));
}

struct TrainPair {
    ImageTensor low, high;
};

std::vector<TrainPair> load_train_pairs(const DatasetManifest& m, int patch) {
    namespace fs = std::filesystem;
    std::vector<TrainPair> pairs;
    for (const ManifestEntry& e : m.entries) {
        if (e.split != Split::train || !e.high) continue;
        TrainPair p;
        p.low = load_image((fs::path(m.root) / e.low).string());
        p.high = load_image((fs::path(m.root) / *e.high).string());
        require(p.low.height == p.high.height && p.low.width == p.high.width &&
                    p.low.channels == p.high.channels,
                "train: low/high pair dimensions differ for " + e.low);
        p.low = pad_to_at_least(p.low, patch, patch);
        p.high = pad_to_at_least(p.high, patch, patch);
        pairs.push_back(std::move(p));
    }
    require(!pairs.empty(), "train: manifest has no paired train entries");
    return pairs;
}

}  // namespace

void save_model(const std::string& path, const ModelConfig& cfg, const ParamBank& bank) {
    ContainerEntries entries;
    entries.emplace_back("__config__", string_entry(cfg.to_json()));
    for (const auto& [name, e] : bank.entries) {
        ContainerEntry ce;
        ce.dims = {static_cast<uint32_t>(e.value.n), static_cast<uint32_t>(e.value.c),
                   static_cast<uint32_t>(e.value.h), static_cast<uint32_t>(e.value.w)};
        ce.data = e.value.data;
        entries.emplace_back(name, std::move(ce));
    }
    save_container(path, entries);
}

LoadedModel load_model(const std::string& path) {
    const ContainerEntries entries = load_container(path);
    LoadedModel m;
    const ContainerEntry* cfg_entry = nullptr;
    for (const auto& [name, e] : entries)
        if (name == "__config__") cfg_entry = &e;
    require(cfg_entry != nullptr, "checkpoint missing __config__ entry: " + path);
    m.cfg = ModelConfig::from_json(entry_string(*cfg_entry));

    std::map<std::string, const ContainerEntry*> by_name;
    for (const auto& [name, e] : entries)
        if (name != "__config__") by_name[name] = &e;
    for (const ParamSpec& s : param_specs(m.cfg)) {
        auto it = by_name.find(s.name);
        require(it != by_name.end(), "checkpoint missing parameter " + s.name + ": " + path);
        const ContainerEntry& ce = *it->second;
        require(ce.dims.size() == 4 && static_cast<int>(ce.dims[0]) == s.n &&
                    static_cast<int>(ce.dims[1]) == s.c && static_cast<int>(ce.dims[2]) == s.h &&
                    static_cast<int>(ce.dims[3]) == s.w,
                "checkpoint parameter shape mismatch for " + s.name + ": " + path);
        Tensor t(s.n, s.c, s.h, s.w);
        t.data = ce.data;
        m.bank.entries[s.name] = {std::move(t), s.trainable};
        by_name.erase(it);
    }
    require(by_name.empty(), "checkpoint has unexpected extra entries: " + path);
    return m;
}

TrainStats train_model(const DatasetManifest& manifest, const RunConfig& cfg,
                       const std::string& out_ckpt, const std::string& loss_csv,
                       std::ostream& log) {
    cfg.validate();
    validate_manifest(manifest);
    const ModelConfig mc = cfg.to_model_config();
    const std::vector<TrainPair> pairs = load_train_pairs(manifest, cfg.patch);
    for (const TrainPair& p : pairs)
        require(p.low.channels == mc.channels,
                "train: image channel count does not match config");

    ParamBank bank = init_params<float>(mc, cfg.seed);
    AdamT<float> adam(cfg.to_adam_config());
    const NoiseSchedule sched = make_schedule(mc.T, mc.beta_start, mc.beta_end);

    Rng crop_rng = Rng(cfg.seed).stream("crop");
    Rng t_rng = Rng(cfg.seed).stream("timestep");
    Rng noise_rng = Rng(cfg.seed).stream("noise");

    std::ofstream csv(loss_csv);
    require(csv.good(), "cannot open loss CSV for writing: " + loss_csv);
    csv << "iter,loss\n";

    TrainStats stats;
    for (int it = 1; it <= cfg.iters; ++it) {
        const int t = t_rng.uniform_int(mc.T) + 1;

        std::vector<Tensor> x0s, conds, epss, refs;
        std::vector<Tensor> lv, lh, ld;
        std::vector<std::vector<std::array<Tensor, 3>>> uppers(
            static_cast<size_t>(cfg.batch));
        std::vector<std::pair<int, int>> level_dims;
        for (int b = 0; b < cfg.batch; ++b) {
            const TrainPair& p = pairs[static_cast<size_t>(crop_rng.uniform_int(
                static_cast<int>(pairs.size())))];
            const int y0 = crop_rng.uniform_int(p.low.height - cfg.patch + 1);
            const int x0 = crop_rng.uniform_int(p.low.width - cfg.patch + 1);
            const ImageTensor low_patch = crop(p.low, y0, x0, cfg.patch, cfg.patch);
            const ImageTensor high_patch = crop(p.high, y0, x0, cfg.patch, cfg.patch);
            const WaveletPyramid low_pyr = dwt2(low_patch, mc.k);
            const WaveletPyramid high_pyr = dwt2(high_patch, mc.k);
            level_dims = low_pyr.level_dims;

            x0s.push_back(map_to_unit(image_to_tensor<float>(high_pyr.approx), mc.k));
            conds.push_back(map_to_unit(image_to_tensor<float>(low_pyr.approx), mc.k));
            Tensor eps(1, x0s.back().c, x0s.back().h, x0s.back().w);
            for (float& v : eps.data) v = static_cast<float>(noise_rng.normal());
            epss.push_back(std::move(eps));
            refs.push_back(image_to_tensor<float>(high_patch));
            lv.push_back(image_to_tensor<float>(low_pyr.details[0].v));
            lh.push_back(image_to_tensor<float>(low_pyr.details[0].h));
            ld.push_back(image_to_tensor<float>(low_pyr.details[0].d));
            for (int lvl = 1; lvl < mc.k; ++lvl) {
                uppers[static_cast<size_t>(b)].push_back(
                    {image_to_tensor<float>(low_pyr.details[static_cast<size_t>(lvl)].v),
                     image_to_tensor<float>(low_pyr.details[static_cast<size_t>(lvl)].h),
                     image_to_tensor<float>(low_pyr.details[static_cast<size_t>(lvl)].d)});
            }
        }

        TrainingData<float> d;
        d.t = t;
        d.alpha_bar_t = static_cast<float>(sched.alpha_bar[static_cast<size_t>(t - 1)]);
        d.lambda = static_cast<float>(cfg.lambda);
        d.eps = stack_batch(epss);
        d.x_t = forward_sample(stack_batch(x0s), t, d.eps, sched);
        d.cond = stack_batch(conds);
        d.reference = stack_batch(refs);
        d.low_details = {stack_batch(lv), stack_batch(lh), stack_batch(ld)};
        d.level_dims = level_dims;
        for (int lvl = 1; lvl < mc.k; ++lvl) {
            std::vector<Tensor> uv, uh, ud;
            for (int b = 0; b < cfg.batch; ++b) {
                auto& triple = uppers[static_cast<size_t>(b)][static_cast<size_t>(lvl - 1)];
                uv.push_back(triple[0]);
                uh.push_back(triple[1]);
                ud.push_back(triple[2]);
            }
            d.upper_details.push_back({stack_batch(uv), stack_batch(uh), stack_batch(ud)});
        }

        GraphT<float> g;
        const TrainingGraph<float> tg = build_training_graph(g, bank, mc, d, /*training=*/true);
        g.backward(tg.loss);

        std::map<std::string, const Tensor*> grads;
        for (const auto& [name, ref] : tg.params) grads[name] = &g.grad(ref);
        adam.step(bank, grads);

        const double loss = static_cast<double>(g.value(tg.loss).data[0]);
        stats.losses.push_back(loss);
        char line[64];
        std::snprintf(line, sizeof(line), "%d,%.9g\n", it, loss);
        csv << line;
        if (it % cfg.log_every == 0) {
            char msg[96];
            std::snprintf(msg, sizeof(msg), "iter %d loss %.6f lr %.3g\n", it, loss,
                          adam.effective_lr());
            log << msg << std::flush;
        }
        if (it % cfg.ckpt_every == 0) save_model(out_ckpt, mc, bank);
    }
    save_model(out_ckpt, mc, bank);
    return stats;
}

ImageTensor enhance(const ImageTensor& low, LoadedModel& model, const EnhanceOptions& opt) {
    validate_image(low, "enhance input");
    const ModelConfig& mc = model.cfg;
    require(low.channels == mc.channels,
            "enhance: image channel count does not match the checkpoint config");
    require(opt.S >= 1 && opt.S <= mc.T, "enhance: need 1 <= steps <= T");
    require(opt.eta >= 0.0 && opt.eta <= 1.0, "enhance: eta must be in [0, 1]");
    const int unit = (1 << mc.k) * 4;
    require(low.height >= unit && low.width >= unit,
            "enhance: image dims must be at least 2^k * 4");

    const int ph = (low.height + unit - 1) / unit * unit;
    const int pw = (low.width + unit - 1) / unit * unit;
    const ImageTensor padded = reflect_pad(low, 0, ph - low.height, 0, pw - low.width);
    WaveletPyramid pyr = dwt2(padded, mc.k);

    const Tensor cond = map_to_unit(image_to_tensor<float>(pyr.approx), mc.k);
    const NoiseSchedule sched = make_schedule(mc.T, mc.beta_start, mc.beta_end);
    Rng noise_rng = Rng(opt.seed).stream("noise");

    Tensor x(cond.n, cond.c, cond.h, cond.w);
    for (float& v : x.data) v = static_cast<float>(noise_rng.normal());

    const std::vector<int> ts = make_subsequence(mc.T, opt.S);
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        Tensor pred(x.n, x.c, x.h, x.w);
        if (opt.use_cnm) {
            GraphT<float> g;
            const NodeMap p = graph_params(g, model.bank, /*with_grad=*/false);
            const int out = cnm_forward(g, p, mc, g.input(x), g.input(cond), t);
            pred = g.value(out);
        }
        x = implicit_step(x, t, t_prev, pred, sched, opt.eta, &noise_rng);
    }
    pyr.approx = tensor_to_image(map_from_unit(x, mc.k));

    if (opt.use_esm) {
        GraphT<float> g;
        const NodeMap p = graph_params(g, model.bank, /*with_grad=*/false);
        const std::array<int, 3> bands = {
            g.input(image_to_tensor<float>(pyr.details[0].v)),
            g.input(image_to_tensor<float>(pyr.details[0].h)),
            g.input(image_to_tensor<float>(pyr.details[0].d))};
        const std::array<int, 3> refined =
            esm_forward(g, p, model.bank, mc, bands, /*training=*/false);
        pyr.details[0].v = tensor_to_image(g.value(refined[0]));
        pyr.details[0].h = tensor_to_image(g.value(refined[1]));
        pyr.details[0].d = tensor_to_image(g.value(refined[2]));
    }

    ImageTensor out = idwt2(pyr);
    out = crop(out, 0, 0, low.height, low.width);
    return clamp01(std::move(out));
}

}  // namespace trifuse
