#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trifuse/adam.hpp"
#include "trifuse/model.hpp"
#include "trifuse/synth.hpp"

namespace trifuse {

// Flat key = value run configuration. Unknown keys are rejected; precedence
// is CLI flag > config file > default.
struct RunConfig {
    // Schedule and sampler.
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int S = 5;
    double eta = 0.0;
    // Wavelet.
    int k = 1;
    // Network.
    int channels = 3;
    int cnm_base_channels = 32;
    int cnm_blocks = 2;
    int cnm_heads = 4;
    int cnm_temb_dim = 64;
    int esm_channels = 32;
    std::string esm_dilations = "1,2";
    int esm_attn_pool = 2;
    bool esm_self_attention = false;
    // Optimizer. The desk-scale default learning rate is larger than the
    // full-scale 1e-4, which remains settable.
    double lr = 2e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lr_decay = 0.8;
    long lr_decay_every = 5000;
    double lambda = 0.1;
    // Training loop (desk-scale defaults; full-scale batch 12 / patch 256
    // remain settable).
    int iters = 500;
    int batch = 4;
    int patch = 64;
    int ckpt_every = 500;
    int log_every = 10;
    // Degradation presets.
    double light_gamma = 1.5, light_gain = 0.70, light_noise = 0.01;
    double moderate_gamma = 2.2, moderate_gain = 0.45, moderate_noise = 0.02;
    double dense_gamma = 3.0, dense_gain = 0.25, dense_noise = 0.03;
    // Randomness.
    uint64_t seed = 42;

    // Applies one `key = value` assignment; unknown key or bad value throws.
    void set(const std::string& key, const std::string& value);
    void validate() const;

    static RunConfig from_file(const std::string& path);

    std::vector<int> parsed_dilations() const;
    ModelConfig to_model_config() const;
    AdamConfig to_adam_config() const;
    DegradationParams preset(LightLevel level) const;
};

}  // namespace trifuse
