#pragma once

#include <cmath>

#include "gradmix/encoder.hpp"

namespace gradmix {

/// Cosine annealing between lr_max (step 0) and lr_min (step = total).
inline double cosine_lr(int step, int total_steps, double lr_max, double lr_min) {
    if (total_steps < 1) throw Error("cosine_lr: total steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw Error("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                    std::to_string(total_steps) + "]");
    return lr_min + 0.5 * (lr_max - lr_min) *
                        (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Standard bias-corrected Adam update of one parameter from its grad slot.
/// t is the 1-based global step count.
inline void adam_step(Parameter& p, double lr, long t, const AdamConfig& cfg = {}) {
    if (t < 1) throw Error("adam: step counter must be >= 1");
    if (!p.value.same_shape(p.grad)) throw Error("adam: gradient shape mismatch");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
        double g = p.grad.data[i];
        double m = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
        double v = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
        p.m.data[i] = static_cast<float>(m);
        p.v.data[i] = static_cast<float>(v);
        p.value.data[i] -=
            static_cast<float>(lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps));
    }
}

}  // namespace gradmix
