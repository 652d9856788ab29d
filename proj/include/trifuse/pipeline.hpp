#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "trifuse/config.hpp"
#include "trifuse/image.hpp"
#include "trifuse/manifest.hpp"
#include "trifuse/model.hpp"
#include "trifuse/params.hpp"

namespace trifuse {

struct LoadedModel {
    ModelConfig cfg;
    ParamBank bank;
};

// TRIF checkpoint with the architecture JSON in the "__config__" entry.
void save_model(const std::string& path, const ModelConfig& cfg, const ParamBank& bank);
LoadedModel load_model(const std::string& path);

struct TrainStats {
    std::vector<double> losses;  // one entry per iteration
};

// Runs the training loop on the manifest's train split: paired patch batch
// -> dwt2 -> noise the reference A_k -> predict -> loss -> Adam. Writes the
// checkpoint at the end and every ckpt_every iterations, a per-iteration
// loss CSV to loss_csv, and a progress line to `log` every log_every
// iterations.
TrainStats train_model(const DatasetManifest& manifest, const RunConfig& cfg,
                       const std::string& out_ckpt, const std::string& loss_csv,
                       std::ostream& log);

struct EnhanceOptions {
    int S = 5;
    double eta = 0.0;
    std::uint64_t seed = 0;
    // Ablation switches: skipping the CNM leaves the untrained pass-through
    // (zero noise prediction); skipping the ESM keeps the input's level-1
    // detail bands.
    bool use_cnm = true;
    bool use_esm = true;
};

// Wavelet -> seeded diffusion on A_k (conditioned on the input's A_k) ->
// ESM-refined level-1 details -> reconstruction, clamped to [0,1]. Pure
// function of (image, model, options).
ImageTensor enhance(const ImageTensor& low, LoadedModel& model, const EnhanceOptions& opt);

}  // namespace trifuse
