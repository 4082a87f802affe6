#pragma once

#include <cmath>
#include <cstdint>
#include <span>

namespace dpr {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update over a flat parameter block. `step` is the
// 1-based update count. Dense update: every entry's moments decay each step.
inline void adam_step(std::span<double> param, std::span<const double> grad,
                      std::span<double> m, std::span<double> v,
                      const AdamConfig& cfg, std::uint64_t step, double lr) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace dpr
