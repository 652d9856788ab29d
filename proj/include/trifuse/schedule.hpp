#pragma once

#include <vector>

#include "trifuse/rng.hpp"
#include "trifuse/tensor.hpp"

namespace trifuse {

// Linear variance schedule with derived arrays. All arrays are 0-indexed by
// t-1 for t in [1..T]. sigma_t = sqrt(beta_t).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta, alpha, alpha_bar, sigma;
};

NoiseSchedule make_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Implicit (DDIM-style) update from t to t_prev given the predicted noise.
// t_prev = 0 returns the x0 estimate. eta > 0 injects eta * sigma_t scaled
// fresh Gaussian noise drawn from `noise_rng` (required in that case).
Tensor implicit_step(const Tensor& x_t, int t, int t_prev, const Tensor& pred_eps,
                     const NoiseSchedule& sched, double eta = 0.0, Rng* noise_rng = nullptr);

// Uniform-stride sampling subsequence {T, T - floor(T/S), ...}, S entries,
// strictly decreasing; the sampler's final hop goes to 0.
std::vector<int> make_subsequence(int T, int S);

}  // namespace trifuse
