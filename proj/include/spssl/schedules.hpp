#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "spssl/errors.hpp"

namespace spssl::schedules {

/// Gaussian warm-up of the consistency weight: beta * exp(-5 (1 - t/t_max)^2).
inline double lambda_c(std::int64_t t, std::int64_t t_max, double beta) {
  if (t_max <= 0) throw RangeError("lambda_c: t_max must be positive");
  if (t < 0 || t > t_max) {
    throw RangeError("lambda_c: t=" + std::to_string(t) + " outside [0, " + std::to_string(t_max) + "]");
  }
  const double r = 1.0 - static_cast<double>(t) / static_cast<double>(t_max);
  return beta * std::exp(-5.0 * r * r);
}

/// Single-cycle cosine annealing from lr0 to 0.
inline double cosine_lr(std::int64_t t, std::int64_t t_max, double lr0) {
  if (t_max <= 0) throw RangeError("cosine_lr: t_max must be positive");
  if (t < 0 || t > t_max) throw RangeError("cosine_lr: t outside [0, t_max]");
  const double lr = lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_max)));
  return lr < 0.0 ? 0.0 : lr;
}

/// Step decay: halve every `step_size` steps.
inline double dae_lr(std::int64_t step, double lr0, std::int64_t step_size = 500) {
  if (step < 0) throw RangeError("dae_lr: step must be >= 0");
  if (step_size <= 0) throw RangeError("dae_lr: step_size must be positive");
  return lr0 / std::pow(2.0, static_cast<double>(step / step_size));
}

/// Uncertainty threshold ramp: u_max * (0.75 + 0.25 exp(-5 (1 - t/t_max)^2)).
inline double uncertainty_threshold(std::int64_t t, std::int64_t t_max, double u_max) {
  if (u_max <= 0) throw ConfigError("uncertainty_threshold: u_max must be positive");
  return u_max * (0.75 + 0.25 * lambda_c(t, t_max, 1.0));
}

}  // namespace spssl::schedules
