#include "trifuse/schedule.hpp"

#include <cmath>

#include "trifuse/common.hpp"

namespace trifuse {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    require(T >= 2, "schedule: T must be at least 2");
    require(beta_start > 0 && beta_start <= beta_end && beta_end < 1,
            "schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    s.sigma.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const size_t i = static_cast<size_t>(t - 1);
        s.beta[i] = beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
        s.sigma[i] = std::sqrt(s.beta[i]);
    }
    return s;
}

Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    require(t >= 1 && t <= sched.T, "forward_sample: t out of range");
    require(eps.same_shape(x0), "forward_sample: eps shape must match x0");
    const double ab = sched.alpha_bar[static_cast<size_t>(t - 1)];
    const float a = static_cast<float>(std::sqrt(ab));
    const float b = static_cast<float>(std::sqrt(1.0 - ab));
    Tensor out = x0;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

Tensor implicit_step(const Tensor& x_t, int t, int t_prev, const Tensor& pred_eps,
                     const NoiseSchedule& sched, double eta, Rng* noise_rng) {
    require(t >= 1 && t <= sched.T, "implicit_step: t out of range");
    require(t_prev >= 0 && t_prev < t, "implicit_step: need t > t_prev >= 0");
    require(pred_eps.same_shape(x_t), "implicit_step: pred_eps shape must match x_t");
    require(eta >= 0.0 && eta <= 1.0, "implicit_step: eta must be in [0, 1]");
    const double ab_t = sched.alpha_bar[static_cast<size_t>(t - 1)];
    const float inv_sqrt_ab = static_cast<float>(1.0 / std::sqrt(ab_t));
    const float sqrt_1mab = static_cast<float>(std::sqrt(1.0 - ab_t));

    Tensor out(x_t.n, x_t.c, x_t.h, x_t.w);
    // x0 estimate from the marginal inversion.
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (x_t.data[i] - sqrt_1mab * pred_eps.data[i]) * inv_sqrt_ab;
    if (t_prev == 0) return out;

    const double ab_prev = sched.alpha_bar[static_cast<size_t>(t_prev - 1)];
    const double sig = eta * sched.sigma[static_cast<size_t>(t - 1)];
    const float a = static_cast<float>(std::sqrt(ab_prev));
    const float dir = static_cast<float>(std::sqrt(std::max(1.0 - ab_prev - sig * sig, 0.0)));
    if (sig > 0.0) {
        require(noise_rng != nullptr, "implicit_step: eta > 0 needs a noise stream");
        const float s = static_cast<float>(sig);
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = a * out.data[i] + dir * pred_eps.data[i] +
                          s * static_cast<float>(noise_rng->normal());
    } else {
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = a * out.data[i] + dir * pred_eps.data[i];
    }
    return out;
}

std::vector<int> make_subsequence(int T, int S) {
    require(S >= 1 && S <= T, "subsequence: need 1 <= S <= T");
    const int stride = T / S;
    std::vector<int> ts(static_cast<size_t>(S));
    for (int i = 0; i < S; ++i) ts[static_cast<size_t>(i)] = T - i * stride;
    return ts;
}

}  // namespace trifuse
