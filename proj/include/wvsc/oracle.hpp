#pragma once

#include <cmath>
#include <stdexcept>

#include "wvsc/channel.hpp"
#include "wvsc/diffusion.hpp"
#include "wvsc/frame.hpp"

namespace wvsc {

/// Returns the same injected noise at every step. Paired with inputs built by
/// the forward process it makes the reverse chain analytically invertible.
class InjectedNoiseOracle final : public NoisePredictor {
 public:
  explicit InjectedNoiseOracle(SemanticFrame eps) : eps_(std::move(eps)) {}
  SemanticFrame predict(FrameView z, int, const FrameList&) const override {
    detail::require_same_length(z, eps_, "InjectedNoiseOracle");
    return eps_;
  }

 private:
  SemanticFrame eps_;
};

/// Knows the clean target z_s and inverts the forward marginal at each step:
/// eps(z, t) = (z - sqrt(abar_t) z_s) / (sqrt(1 - abar_t) hn).
/// Coordinates with hn = 0 get 0.
class CleanTargetOracle final : public NoisePredictor {
 public:
  CleanTargetOracle(SemanticFrame target, const ChannelRealization& chan, const NoiseSchedule& sched,
                    double weight = 1.0)
      : target_(std::move(target)), chan_(chan), sched_(sched), weight_(weight) {
    detail::require_same_length(target_, chan_.hn(), "CleanTargetOracle");
  }

  SemanticFrame predict(FrameView z, int t, const FrameList&) const override {
    detail::require_same_length(z, target_, "CleanTargetOracle");
    detail::require_timestep(t, sched_, 1, "CleanTargetOracle");
    SemanticFrame out(z.size(), 0.0);
    if (weight_ == 0.0) return out;
    const double a = std::sqrt(sched_.abar(t));
    const double b = std::sqrt(1.0 - sched_.abar(t)) * weight_;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const double hn = chan_.hn()[j];
      out[j] = hn > 0.0 ? (z[j] - a * target_[j]) / (b * hn) : 0.0;
    }
    return out;
  }

 private:
  SemanticFrame target_;
  const ChannelRealization& chan_;
  const NoiseSchedule& sched_;
  double weight_;
};

/// Residual-branch oracle for the P-frame chain: with weight sqrt(1 - lambda),
/// phi(z', t) = (z' - sqrt(abar_t) z_s) / (sqrt(1 - abar_t) sqrt(1 - lambda) hn).
/// Returns 0 when lambda = 1.
inline CleanTargetOracle residual_oracle(SemanticFrame target, double lambda, const ChannelRealization& chan,
                                         const NoiseSchedule& sched) {
  return CleanTargetOracle(std::move(target), chan, sched, std::sqrt(1.0 - lambda));
}

}  // namespace wvsc
