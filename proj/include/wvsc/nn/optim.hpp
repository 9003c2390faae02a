#pragma once

#include <cmath>
#include <stdexcept>

#include "wvsc/nn/params.hpp"

namespace wvsc::nn {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One AdamW step with decoupled weight decay over trainable parameters that
/// received a gradient since the last zero_grad(). Others are left untouched,
/// including their moments.
template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adamw_step: learning rate must be > 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw std::invalid_argument("adamw_step: betas must lie in [0, 1)");
  }
  if (!(cfg.weight_decay >= 0.0)) throw std::invalid_argument("adamw_step: weight decay must be >= 0");
  const long long step = ++store.step_count();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (auto& [_, p] : store) {
    if (!p.trainable || !p.has_grad) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * g * g;
      p.first_moment[i] = static_cast<T>(m);
      p.second_moment[i] = static_cast<T>(v);
      double w = p.value[i];
      w -= cfg.lr * cfg.weight_decay * w;
      w -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p.value[i] = static_cast<T>(w);
    }
  }
}

/// Piecewise-constant schedule: `steps` equal segments whose rates go
/// geometrically from lr_start to lr_end over `total` iterations.
inline double stepped_lr(double lr_start, double lr_end, int steps, long long iteration, long long total) {
  if (steps <= 1 || total <= 0) return lr_start;
  long long seg = iteration * steps / total;
  if (seg >= steps) seg = steps - 1;
  const double ratio = std::pow(lr_end / lr_start, static_cast<double>(seg) / static_cast<double>(steps - 1));
  return lr_start * ratio;
}

}  // namespace wvsc::nn
