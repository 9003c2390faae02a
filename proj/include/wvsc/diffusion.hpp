#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wvsc/channel.hpp"
#include "wvsc/frame.hpp"
#include "wvsc/rng.hpp"

namespace wvsc {

/// Diffusion hyperparameters. Index 0 of alpha_bar is the clean state (1.0);
/// alpha and betas are stored 1-based as well (entry 0 unused, set to 1 / 0).
struct NoiseSchedule {
  int total_steps = 0;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> betas;

  double abar(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
};

/// Linear beta schedule from beta_start to beta_end over total_steps.
inline NoiseSchedule build_schedule(int total_steps, double beta_start, double beta_end) {
  if (total_steps < 1) throw std::invalid_argument("build_schedule: total_steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.total_steps = total_steps;
  const auto n = static_cast<std::size_t>(total_steps);
  s.alpha.assign(n + 1, 1.0);
  s.betas.assign(n + 1, 0.0);
  s.alpha_bar.assign(n + 1, 1.0);
  for (std::size_t t = 1; t <= n; ++t) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(n - 1);
    s.betas[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.betas[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

/// Timestep m in [0, T] whose alpha_bar is closest to 1/(1+sigma2), so that
/// the forward marginal at m matches the normalized received frame. Ties go
/// to the smaller m.
inline int find_start_step(double sigma2, const NoiseSchedule& sched) {
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("find_start_step: sigma2 must be >= 0");
  const double target = 1.0 / (1.0 + sigma2);
  int best = 0;
  double best_gap = std::abs(sched.abar(0) - target);
  for (int t = 1; t <= sched.total_steps; ++t) {
    const double gap = std::abs(sched.abar(t) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = t;
    }
  }
  return best;
}

namespace detail {

inline void require_timestep(int t, const NoiseSchedule& sched, int lo, const char* where) {
  if (t < lo || t > sched.total_steps) {
    throw std::invalid_argument(std::string(where) + ": timestep " + std::to_string(t) +
                                " outside [" + std::to_string(lo) + ", " +
                                std::to_string(sched.total_steps) + "]");
  }
}

}  // namespace detail

/// z_t = sqrt(abar_t) z_start + sqrt(1 - abar_t) (hn * eps). t = 0 returns z_start.
inline SemanticFrame forward_sample(FrameView z_start, int t, FrameView eps,
                                    const ChannelRealization& chan, const NoiseSchedule& sched) {
  detail::require_timestep(t, sched, 0, "forward_sample");
  detail::require_same_length(z_start, eps, "forward_sample");
  detail::require_same_length(z_start, chan.hn(), "forward_sample");
  if (t == 0) return SemanticFrame(z_start.begin(), z_start.end());
  const double a = std::sqrt(sched.abar(t));
  const double b = std::sqrt(1.0 - sched.abar(t));
  SemanticFrame out(z_start.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = a * z_start[j] + b * chan.hn()[j] * eps[j];
  return out;
}

/// Noise estimator eps(z, t). `context` carries previously reconstructed
/// frames (oldest first) for conditional predictors; unconditional ones ignore it.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual SemanticFrame predict(FrameView z, int t, const FrameList& context) const = 0;
};

class ZeroPredictor final : public NoisePredictor {
 public:
  SemanticFrame predict(FrameView z, int, const FrameList&) const override {
    return SemanticFrame(z.size(), 0.0);
  }
};

/// Deterministic-plus-optional-noise DDIM update with the noise estimate
/// scaled by hn in both the clean estimate and the direction term:
///
///   z_{t-1} = sqrt(abar_{t-1}) (z_t - sqrt(1-abar_t) hn*eps) / sqrt(abar_t)
///           + sqrt(1 - abar_{t-1} - sigma_t^2) hn*eps + sigma_t * xi
///
/// xi is drawn from rng only when sigma_t > 0.
inline SemanticFrame ddim_update(FrameView z_t, FrameView eps, int t, const NoiseSchedule& sched,
                                 const ChannelRealization& chan, double sigma_t, Rng& rng) {
  detail::require_timestep(t, sched, 1, "reverse step");
  detail::require_same_length(z_t, eps, "reverse step");
  detail::require_same_length(z_t, chan.hn(), "reverse step");
  if (!(sigma_t >= 0.0)) throw std::invalid_argument("reverse step: sigma_t must be >= 0");
  const double abar_t = sched.abar(t);
  const double abar_prev = sched.abar(t - 1);
  const double dir_var = 1.0 - abar_prev - sigma_t * sigma_t;
  if (dir_var < 0.0) {
    throw std::invalid_argument("reverse step: sigma_t^2 exceeds 1 - abar_{t-1}");
  }
  const double keep = std::sqrt(1.0 - abar_t);
  const double inv_sqrt_abar = 1.0 / std::sqrt(abar_t);
  const double sqrt_abar_prev = std::sqrt(abar_prev);
  const double dir = std::sqrt(dir_var);
  const auto& hn = chan.hn();
  SemanticFrame out(z_t.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double scaled_eps = hn[j] * eps[j];
    const double clean = (z_t[j] - keep * scaled_eps) * inv_sqrt_abar;
    out[j] = sqrt_abar_prev * clean + dir * scaled_eps;
  }
  if (sigma_t > 0.0) {
    for (double& v : out) v += sigma_t * rng.normal();
  }
  return out;
}

/// Unconditional reverse step for the reference frame chain.
inline SemanticFrame reverse_step_reference(FrameView z_t, int t, const NoisePredictor& predictor,
                                            const ChannelRealization& chan,
                                            const NoiseSchedule& sched, double sigma_t, Rng& rng) {
  detail::require_timestep(t, sched, 1, "reverse_step_reference");
  const SemanticFrame eps = predictor.predict(z_t, t, {});
  if (eps.size() != z_t.size()) {
    throw std::invalid_argument("reverse_step_reference: predictor changed the frame length");
  }
  return ddim_update(z_t, eps, t, sched, chan, sigma_t, rng);
}

enum class EnergyKind {
  /// V1(z) = (1/L) ||z - most recent reconstructed frame||^2
  MsePrevious,
  None,
};

enum class SecondEnergyKind {
  Zero,
};

/// Multi-frame conditional steering: scale k(t) and the two energy terms.
struct SteeringConfig {
  std::function<double(int)> k_of_t = [](int) { return 0.0; };
  EnergyKind v1 = EnergyKind::MsePrevious;
  SecondEnergyKind v2 = SecondEnergyKind::Zero;
};

inline SteeringConfig constant_steering(double k, EnergyKind v1 = EnergyKind::MsePrevious) {
  if (!(k >= 0.0)) throw std::invalid_argument("steering scale k must be >= 0");
  SteeringConfig cfg;
  cfg.k_of_t = [k](int) { return k; };
  cfg.v1 = v1;
  return cfg;
}

/// Gradient of V2 at the pre-steering candidate z_{t-1}. Only the zero energy
/// exists today, so this is identically zero.
inline SemanticFrame second_energy_gradient(FrameView candidate, const FrameList&,
                                            const SteeringConfig& cfg) {
  switch (cfg.v2) {
    case SecondEnergyKind::Zero:
      break;
  }
  return SemanticFrame(candidate.size(), 0.0);
}

/// k(t) * grad(V1) at z_t; with the MSE energy this is k(t) * (2/L) (z_t - f_prev).
/// The optional candidate z_{t-1} feeds the V2 hook, which enters with the
/// opposite sign and contributes nothing while V2 is zero.
inline SemanticFrame steering_term(FrameView z_t, const FrameList& previous, const SteeringConfig& cfg,
                                   int t, const SemanticFrame* candidate = nullptr) {
  const double k = cfg.k_of_t(t);
  if (!(k >= 0.0)) throw std::invalid_argument("steering_term: k(t) must be >= 0");
  SemanticFrame out(z_t.size(), 0.0);
  if (cfg.v1 == EnergyKind::MsePrevious) {
    if (previous.empty()) {
      throw std::invalid_argument("steering_term: MSE energy needs at least one previous frame");
    }
    const SemanticFrame& target = previous.back();
    detail::require_same_length(z_t, target, "steering_term");
    const double coeff = k * 2.0 / static_cast<double>(z_t.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = coeff * (z_t[j] - target[j]);
  }
  if (candidate != nullptr) {
    const SemanticFrame g2 = second_energy_gradient(*candidate, previous, cfg);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] -= k * g2[j];
  }
  return out;
}

}  // namespace wvsc
