#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "wvsc/channel.hpp"
#include "wvsc/diffusion.hpp"
#include "wvsc/frame.hpp"
#include "wvsc/rng.hpp"

namespace wvsc {

/// Knobs of the decoupled compensation sampler for one P frame.
struct CompensationParams {
  double lambda = 0.7;
  SteeringConfig steering = constant_steering(0.3);
  double sigma_t = 0.0;
  int start_step = 10;
  bool record_trace = false;
};

struct DdmfcStepRecord {
  int t = 0;
  SemanticFrame z_t;
  SemanticFrame z_prime_t;
  SemanticFrame base_noise;
  SemanticFrame residual_noise;
  double steering_norm = 0.0;
};

struct DdmfcTrace {
  std::vector<DdmfcStepRecord> steps;
};

namespace detail {

inline void require_lambda(double lambda, const char* where) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument(std::string(where) + ": lambda must lie in [0, 1]");
  }
}

}  // namespace detail

/// sqrt(lambda) f_ref + sqrt(1 - lambda) r
inline SemanticFrame compose_p_frame(FrameView f_ref, FrameView r, double lambda) {
  detail::require_lambda(lambda, "compose_p_frame");
  detail::require_same_length(f_ref, r, "compose_p_frame");
  return axpby(std::sqrt(lambda), f_ref, std::sqrt(1.0 - lambda), r);
}

/// Normalized received composition: the reverse chain's first state z_m.
inline SemanticFrame start_point(FrameView f_ref_rx, FrameView r_rx, double lambda, double sigma2) {
  detail::require_lambda(lambda, "start_point");
  detail::require_same_length(f_ref_rx, r_rx, "start_point");
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("start_point: sigma2 must be >= 0");
  const double norm = 1.0 / std::sqrt(1.0 + sigma2);
  return axpby(norm * std::sqrt(lambda), f_ref_rx, norm * std::sqrt(1.0 - lambda), r_rx);
}

/// Total noise sqrt(lambda) eps_ref + sqrt(1 - lambda) phi; lambda = 1 gives
/// the reference-frame case.
inline SemanticFrame combine_noise(FrameView eps_ref, FrameView phi, double lambda) {
  detail::require_lambda(lambda, "combine_noise");
  detail::require_same_length(eps_ref, phi, "combine_noise");
  return axpby(std::sqrt(lambda), eps_ref, std::sqrt(1.0 - lambda), phi);
}

/// z'_t = z_t - sqrt(lambda) sqrt(1 - abar_t) hn * eps_ref_t
inline SemanticFrame remove_base_noise(FrameView z_t, FrameView eps_ref_t, double lambda, int t,
                                       const NoiseSchedule& sched, const ChannelRealization& chan) {
  detail::require_lambda(lambda, "remove_base_noise");
  detail::require_timestep(t, sched, 1, "remove_base_noise");
  detail::require_same_length(z_t, eps_ref_t, "remove_base_noise");
  detail::require_same_length(z_t, chan.hn(), "remove_base_noise");
  const double c = std::sqrt(lambda) * std::sqrt(1.0 - sched.abar(t));
  SemanticFrame out(z_t.begin(), z_t.end());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] -= c * chan.hn()[j] * eps_ref_t[j];
  return out;
}

namespace detail {

inline SemanticFrame predict_checked(const NoisePredictor& p, FrameView z, int t,
                                     const FrameList& context) {
  SemanticFrame out = p.predict(z, t, context);
  if (out.size() != z.size()) throw std::invalid_argument("noise predictor changed the frame length");
  return out;
}

}  // namespace detail

/// One conditional decoupled reverse step t -> t-1 (2 <= t <= m). Steering
/// is skipped when no previous frame is available.
inline SemanticFrame reverse_step_p(FrameView z_t, FrameView z_prime_t, FrameView eps_ref_t,
                                    const NoisePredictor& residual_predictor,
                                    const FrameList& previous, const CompensationParams& params,
                                    const NoiseSchedule& sched, const ChannelRealization& chan,
                                    int t, Rng& rng, DdmfcStepRecord* record = nullptr) {
  detail::require_timestep(t, sched, 2, "reverse_step_p");
  const SemanticFrame phi = detail::predict_checked(residual_predictor, z_prime_t, t, previous);
  const SemanticFrame eps = combine_noise(eps_ref_t, phi, params.lambda);
  SemanticFrame next = ddim_update(z_t, eps, t, sched, chan, params.sigma_t, rng);
  double steer_norm = 0.0;
  if (!previous.empty()) {
    const SemanticFrame steer = steering_term(z_t, previous, params.steering, t, &next);
    for (std::size_t j = 0; j < next.size(); ++j) next[j] -= steer[j];
    steer_norm = std::sqrt(squared_norm(steer));
  }
  if (record != nullptr) {
    record->t = t;
    record->z_t.assign(z_t.begin(), z_t.end());
    record->z_prime_t.assign(z_prime_t.begin(), z_prime_t.end());
    record->base_noise.assign(eps_ref_t.begin(), eps_ref_t.end());
    record->residual_noise = phi;
    record->steering_norm = steer_norm;
  }
  return next;
}

/// Last step at t = 1: the compensated P frame
/// (z_1 - sqrt(1 - abar_1) hn * eps_1) / sqrt(abar_1).
inline SemanticFrame final_step(FrameView z_1, FrameView z_prime_1, FrameView eps_ref_1,
                                const NoisePredictor& residual_predictor, const FrameList& previous,
                                const CompensationParams& params, const NoiseSchedule& sched,
                                const ChannelRealization& chan, DdmfcStepRecord* record = nullptr) {
  detail::require_timestep(1, sched, 1, "final_step");
  const SemanticFrame phi = detail::predict_checked(residual_predictor, z_prime_1, 1, previous);
  const SemanticFrame eps = combine_noise(eps_ref_1, phi, params.lambda);
  detail::require_same_length(z_1, chan.hn(), "final_step");
  const double keep = std::sqrt(1.0 - sched.abar(1));
  const double inv = 1.0 / std::sqrt(sched.abar(1));
  SemanticFrame out(z_1.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (z_1[j] - keep * chan.hn()[j] * eps[j]) * inv;
  if (record != nullptr) {
    record->t = 1;
    record->z_t.assign(z_1.begin(), z_1.end());
    record->z_prime_t.assign(z_prime_1.begin(), z_prime_1.end());
    record->base_noise.assign(eps_ref_1.begin(), eps_ref_1.end());
    record->residual_noise = phi;
    record->steering_norm = 0.0;
  }
  return out;
}

/// Base-noise estimates eps_t^ref for t = 1..m, produced once per GoP by the
/// reference chain and shared by every P frame.
class BaseNoiseTable {
 public:
  BaseNoiseTable() = default;
  explicit BaseNoiseTable(std::vector<SemanticFrame> by_step) : eps_(std::move(by_step)) {}

  int start_step() const { return static_cast<int>(eps_.size()); }
  const SemanticFrame& at(int t) const {
    if (t < 1 || t > start_step()) throw std::out_of_range("BaseNoiseTable: timestep out of range");
    return eps_[static_cast<std::size_t>(t - 1)];
  }

 private:
  std::vector<SemanticFrame> eps_;
};

/// Reference chain from z_m = f_ref_rx (no renormalization), caching the
/// predicted noise at each step. The base predictor runs exactly m times.
inline BaseNoiseTable run_base_chain(FrameView f_ref_rx, const NoisePredictor& base_predictor, int m,
                                     double sigma_t, const NoiseSchedule& sched,
                                     const ChannelRealization& chan, Rng& rng) {
  if (m < 0 || m > sched.total_steps) {
    throw std::invalid_argument("run_base_chain: start step " + std::to_string(m) + " outside [0, " +
                                std::to_string(sched.total_steps) + "]");
  }
  detail::require_same_length(f_ref_rx, chan.hn(), "run_base_chain");
  std::vector<SemanticFrame> eps(static_cast<std::size_t>(m));
  SemanticFrame z(f_ref_rx.begin(), f_ref_rx.end());
  for (int t = m; t >= 1; --t) {
    SemanticFrame e = detail::predict_checked(base_predictor, z, t, {});
    if (t > 1) z = ddim_update(z, e, t, sched, chan, sigma_t, rng);
    eps[static_cast<std::size_t>(t - 1)] = std::move(e);
  }
  return BaseNoiseTable(std::move(eps));
}

/// P-frame half of the sampler given a cached base-noise table: starts from
/// the normalized received composition and runs t = m..2 decoupled steps, then
/// the closed-form last step. m = 0 returns the start point unchanged.
inline std::pair<SemanticFrame, DdmfcTrace> ddmfc_sample_p(
    FrameView f_ref_rx, FrameView r_rx, const FrameList& previous, const BaseNoiseTable& base_noise,
    const NoisePredictor& residual_predictor, const CompensationParams& params,
    const NoiseSchedule& sched, const ChannelRealization& chan, Rng& rng) {
  const int m = params.start_step;
  if (m < 0 || m > sched.total_steps) {
    throw std::invalid_argument("ddmfc_sample: start step " + std::to_string(m) + " outside [0, " +
                                std::to_string(sched.total_steps) + "]");
  }
  if (base_noise.start_step() != m) {
    throw std::invalid_argument("ddmfc_sample: base-noise table was built for a different start step");
  }
  DdmfcTrace trace;
  SemanticFrame z = start_point(f_ref_rx, r_rx, params.lambda, chan.sigma2());
  if (m == 0) return {std::move(z), std::move(trace)};
  detail::require_same_length(z, chan.hn(), "ddmfc_sample");
  if (params.record_trace) trace.steps.reserve(static_cast<std::size_t>(m));
  for (int t = m; t >= 2; --t) {
    const SemanticFrame& eps_ref = base_noise.at(t);
    const SemanticFrame z_prime = remove_base_noise(z, eps_ref, params.lambda, t, sched, chan);
    DdmfcStepRecord rec;
    z = reverse_step_p(z, z_prime, eps_ref, residual_predictor, previous, params, sched, chan, t, rng,
                       params.record_trace ? &rec : nullptr);
    if (params.record_trace) trace.steps.push_back(std::move(rec));
  }
  const SemanticFrame& eps_ref = base_noise.at(1);
  const SemanticFrame z_prime = remove_base_noise(z, eps_ref, params.lambda, 1, sched, chan);
  DdmfcStepRecord rec;
  SemanticFrame out = final_step(z, z_prime, eps_ref, residual_predictor, previous, params, sched, chan,
                                 params.record_trace ? &rec : nullptr);
  if (params.record_trace) trace.steps.push_back(std::move(rec));
  return {std::move(out), std::move(trace)};
}

/// Full sampler for a single P frame: reference chain, then the P-frame chain.
/// Callers with several P frames per GoP should build the base-noise table
/// once with run_base_chain and call ddmfc_sample_p per frame.
inline std::pair<SemanticFrame, DdmfcTrace> ddmfc_sample(
    FrameView f_ref_rx, FrameView r_rx, const FrameList& previous, const NoisePredictor& base_predictor,
    const NoisePredictor& residual_predictor, const CompensationParams& params,
    const NoiseSchedule& sched, const ChannelRealization& chan, Rng& rng) {
  const BaseNoiseTable table =
      run_base_chain(f_ref_rx, base_predictor, params.start_step, params.sigma_t, sched, chan, rng);
  return ddmfc_sample_p(f_ref_rx, r_rx, previous, table, residual_predictor, params, sched, chan, rng);
}

}  // namespace wvsc
