#pragma once

#include <cmath>
#include <map>
#include <string>

#include "trifuse/params.hpp"
#include "trifuse/tensor.hpp"

namespace trifuse {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay_factor = 0.8;
    long decay_every = 5000;
};

// Adam with a staircase learning-rate decay:
// lr_eff(step) = lr * decay_factor^floor(step / decay_every), step 0-based.
template <typename R>
class AdamT {
  public:
    explicit AdamT(AdamConfig cfg) : cfg_(cfg) {
        require(cfg.lr > 0, "adam: learning rate must be positive");
        require(cfg.decay_every > 0, "adam: decay interval must be positive");
    }

    long step_count() const { return step_; }

    double effective_lr() const {
        return cfg_.lr * std::pow(cfg_.decay_factor, static_cast<double>(step_ / cfg_.decay_every));
    }

    // Applies one update to every trainable entry. `grads` maps parameter
    // name to its gradient tensor; a missing name means zero gradient.
    void step(ParamBankT<R>& bank, const std::map<std::string, const TensorT<R>*>& grads) {
        const double lr = effective_lr();
        const double t = static_cast<double>(step_ + 1);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
        for (auto& [name, entry] : bank.entries) {
            if (!entry.trainable) continue;
            auto git = grads.find(name);
            const TensorT<R>* g = git == grads.end() ? nullptr : git->second;
            if (g) {
                require(g->same_shape(entry.value), "adam: gradient shape mismatch for " + name);
                for (R gv : g->data) {
                    if (!std::isfinite(static_cast<double>(gv)))
                        throw std::runtime_error("adam: non-finite gradient for parameter " +
                                                 name);
                }
            }
            auto& m = moment1_[name];
            auto& v = moment2_[name];
            if (m.data.empty()) {
                m = TensorT<R>(entry.value.n, entry.value.c, entry.value.h, entry.value.w);
                v = TensorT<R>(entry.value.n, entry.value.c, entry.value.h, entry.value.w);
            }
            for (size_t i = 0; i < entry.value.data.size(); ++i) {
                const double gi = g ? static_cast<double>(g->data[i]) : 0.0;
                const double mi = cfg_.beta1 * static_cast<double>(m.data[i]) +
                                  (1.0 - cfg_.beta1) * gi;
                const double vi = cfg_.beta2 * static_cast<double>(v.data[i]) +
                                  (1.0 - cfg_.beta2) * gi * gi;
                m.data[i] = static_cast<R>(mi);
                v.data[i] = static_cast<R>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                entry.value.data[i] -=
                    static_cast<R>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
        ++step_;
    }

  private:
    AdamConfig cfg_;
    long step_ = 0;
    std::map<std::string, TensorT<R>> moment1_, moment2_;
};

using Adam = AdamT<float>;

}  // namespace trifuse
