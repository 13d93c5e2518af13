#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "relprox/errors.hpp"

namespace relprox {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWMoments {
  std::vector<double> m;
  std::vector<double> v;

  void ensure_size(std::size_t n) {
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    if (m.size() != n || v.size() != n) throw invalid_input_error("optimizer moment size mismatch");
  }
};

// Effective learning rate under the exact-halving schedule: halved after
// every `period` epochs (epoch is 1-based). Powers of two are exact in
// binary floating point, so the halving is bit-exact.
inline double lr_at_epoch(double lr_initial, std::uint64_t epoch, std::uint64_t period) {
  if (epoch < 1) throw invalid_input_error("lr_at_epoch: epoch is 1-based");
  if (period == 0) return lr_initial;
  const std::uint64_t k = (epoch - 1) / period;
  return lr_initial * std::ldexp(1.0, -static_cast<int>(k));
}

// Adaptive-moment step with bias correction and DECOUPLED weight decay:
// the decay multiplies parameters directly instead of entering the moment
// estimates. step_index is 1-based.
inline void optimizer_step(std::span<double> params, std::span<const double> grads,
                           AdamWMoments& moments, std::uint64_t step_index,
                           const AdamWConfig& cfg, const std::string& group = "") {
  if (params.size() != grads.size()) throw invalid_input_error("optimizer shape mismatch");
  if (step_index < 1) throw invalid_input_error("optimizer step_index is 1-based");
  moments.ensure_size(params.size());

  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw training_abort("non-finite gradient in " + (group.empty() ? "parameters" : group) +
                           " at flat index " + std::to_string(i));
    }
  }

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (std::size_t i = 0; i < params.size(); ++i) {
    moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * grads[i];
    moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = moments.m[i] / bc1;
    const double vhat = moments.v[i] / bc2;
    params[i] -= cfg.lr * cfg.weight_decay * params[i];
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

}  // namespace relprox
