#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wvsc/channel.hpp"
#include "wvsc/ddmfc.hpp"
#include "wvsc/diffusion.hpp"
#include "wvsc/models/bundle.hpp"
#include "wvsc/oracle.hpp"

namespace wvsc {

/// Runtime failure inside transmit_gop, tagged with the stage that raised it.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

}  // namespace detail

using Pixels = std::vector<std::uint8_t>;

struct GopOptions {
  CompensationParams comp;
  bool oracle = false;         ///< clean-target oracles instead of the learned predictors
  bool semantic_only = false;  ///< stop after the transmitter-side semantic frames
  bool decode = true;          ///< produce 8-bit reconstructions
};

/// One GoP through the system. Index 0 is the I frame; P-frame vectors are
/// indexed by frame, with index 0 left empty.
struct GopBundle {
  std::vector<Pixels> frames;                        ///< x^i
  FrameList semantic;                                ///< f^i, unnormalized encoder output
  SemanticFrame reference_normalized;                ///< f^ref / g_ref, unit power
  FrameList residuals;                               ///< r^i = f^i - fbar^i
  FrameList residuals_normalized;                    ///< r^i / g_r^i
  double reference_gain = 1.0;                       ///< g_ref, side information
  std::vector<double> residual_gains;                ///< g_r^i, side information
  std::shared_ptr<const ChannelRealization> channel; ///< shared by every frame of the GoP
  SemanticFrame reference_received_normalized;       ///< received unit-power I frame
  SemanticFrame reference_received;                  ///< fhat^ref
  FrameList residuals_received;                      ///< rhat^i
  FrameList compensated;                             ///< ftilde^i (DDMFC output)
  FrameList predicted;                               ///< fcheck^i (motion decoder output)
  FrameList reconstructed;                           ///< fhat^i; index 0 is fhat^ref
  std::vector<Pixels> decoded;                       ///< xhat^i
  std::vector<DdmfcTrace> traces;
  std::size_t channel_uses = 0;                      ///< complex symbols sent for the GoP

  std::size_t size() const { return frames.size(); }
};

/// Complex channel uses per frame over source dimensions.
inline double channel_bandwidth_ratio(std::size_t code_length, int width, int height) {
  return (static_cast<double>(code_length) / 2.0) / (static_cast<double>(width) * height * 3.0);
}

/// L/2 for the I frame plus L/2 per residual.
inline std::size_t gop_channel_uses(std::size_t code_length, std::size_t gop_size) {
  return gop_size == 0 ? 0 : code_length / 2 + (gop_size - 1) * (code_length / 2);
}

/// Start step actually used: 0 on a noiseless channel, the noise-matched
/// step when `requested` is negative, otherwise `requested`.
inline int effective_start_step(int requested, double sigma2, const NoiseSchedule& sched) {
  if (sigma2 == 0.0) return 0;
  if (requested < 0) return find_start_step(sigma2, sched);
  return requested;
}

/// Conditioning set for the P frame that follows `history`: the newest
/// `window` reconstructions, or {reference} at the start of a GoP.
inline FrameList previous_window(const FrameList& history, const SemanticFrame& reference, std::size_t window) {
  if (history.empty() || window == 0) return {reference};
  const std::size_t first = history.size() > window ? history.size() - window : 0;
  return FrameList(history.begin() + static_cast<std::ptrdiff_t>(first), history.end());
}

/// Tape graph of a GoP: the bundle plus per-frame reconstruction losses
/// (pixel MSE in [-0.5, 0.5] units). DDMFC sits outside the graph.
template <typename T>
struct GopGraph {
  GopBundle bundle;
  std::vector<nn::Var<T>> frame_losses;
};

namespace detail {

template <typename T>
nn::Var<T> row_constant(nn::Tape<T>& tape, FrameView f) {
  return tape.constant(nn::Tensor<T>::template from<double>(nn::Shape{1, f.size()}, f));
}

template <typename T>
SemanticFrame values_of(nn::Var<T> v) {
  SemanticFrame out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(v.value()[i]);
  return out;
}

/// hs * x + hn * n on the tape; the noise is a constant, so gradients see hs.
template <typename T>
nn::Var<T> transmit_on_tape(nn::Tape<T>& tape, nn::Var<T> x, const ChannelRealization& chan, Rng& rng) {
  if (x.size() != chan.length()) {
    throw std::invalid_argument("frame length " + std::to_string(x.size()) + " does not match channel length " +
                                std::to_string(chan.length()));
  }
  SemanticFrame noise(chan.length(), 0.0);
  if (chan.sigma2() > 0.0) noise = hadamard(chan.hn(), draw_channel_noise(rng, chan.length(), chan.sigma2()));
  auto y = nn::mul(nn::reshape(x, nn::Shape{1, chan.length()}), row_constant(tape, chan.hs()));
  return nn::add(y, row_constant(tape, noise));
}

}  // namespace detail

/// Runs one GoP on `tape`. Randomness: stream derive_seed(seed, 0) carries the
/// I frame and the base chain; P frame i owns derive_seed(seed, i).
template <typename T>
GopGraph<T> run_gop(nn::Tape<T>& tape, const models::ModelBundle<T>& m,
                    const std::vector<std::span<const std::uint8_t>>& frames,
                    std::shared_ptr<const ChannelRealization> channel, const NoiseSchedule& sched,
                    const GopOptions& opt, std::uint64_t seed) {
  if (frames.empty()) throw std::invalid_argument("transmit_gop: empty GoP");
  if (!channel) throw std::invalid_argument("transmit_gop: missing channel realization");
  const auto& codec = m.codec;
  const std::size_t n = frames.size(), len = m.code_length();
  const ChannelRealization& chan = *channel;
  GopGraph<T> out;
  GopBundle& b = out.bundle;
  b.channel = channel;
  for (const auto& f : frames) b.frames.emplace_back(f.begin(), f.end());
  b.channel_uses = gop_channel_uses(len, n);

  std::vector<models::Coefficients> coeffs(n);
  std::vector<nn::Var<T>> f(n);
  detail::in_stage("semantic_encode", [&] {
    if (chan.length() != len) {
      throw std::invalid_argument("channel built for length " + std::to_string(chan.length()) +
                                  ", code length is " + std::to_string(len));
    }
    for (std::size_t i = 0; i < n; ++i) {
      coeffs[i] = codec.analyze(frames[i]);
      f[i] = codec.project(tape, coeffs[i]);
      b.semantic.push_back(detail::values_of(f[i]));
    }
  });
  auto [f_ref_n, g_ref] = models::power_normalize(f[0]);
  b.reference_normalized = detail::values_of(f_ref_n);
  b.reference_gain = static_cast<double>(g_ref.value()[0]);
  auto inv_g_ref = nn::reciprocal(g_ref);

  // Transmitter side of the P frames.
  b.residuals.resize(n);
  b.residuals_normalized.resize(n);
  b.residual_gains.assign(n, 1.0);
  std::vector<nn::Var<T>> r_n(n), g_r(n);
  detail::in_stage("motion_encode", [&] {
    for (std::size_t i = 1; i < n; ++i) {
      auto pred = m.motion_encoder.forward(tape, nn::scale_by(f[i], inv_g_ref), f_ref_n).predicted;
      auto r = nn::sub(f[i], nn::scale_by(pred, g_ref));
      b.residuals[i] = detail::values_of(r);
      std::tie(r_n[i], g_r[i]) = models::power_normalize(r);
      b.residuals_normalized[i] = detail::values_of(r_n[i]);
      b.residual_gains[i] = static_cast<double>(g_r[i].value()[0]);
    }
  });
  if (opt.semantic_only) return out;

  Rng rng0(derive_seed(seed, 0));
  nn::Var<T> ref_rx_n = detail::in_stage("transmit", [&] { return detail::transmit_on_tape(tape, f_ref_n, chan, rng0); });
  auto ref_rx = nn::scale_by(ref_rx_n, g_ref);
  b.reference_received_normalized = detail::values_of(ref_rx_n);
  b.reference_received = detail::values_of(ref_rx);
  b.residuals_received.resize(n);
  b.compensated.resize(n);
  b.predicted.resize(n);
  b.reconstructed.resize(n);
  b.traces.resize(n);
  b.reconstructed[0] = b.reference_received;

  std::vector<nn::Var<T>> f_hat(n);
  f_hat[0] = ref_rx;

  if (n > 1) {
    CompensationParams comp = opt.comp;
    comp.start_step = effective_start_step(comp.start_step, chan.sigma2(), sched);
    const SemanticFrame& ref_rx_vals = b.reference_received_normalized;

    const models::BasePredictor<T> base_net(m);
    const models::ResidualPredictor<T> residual_net(m);
    std::unique_ptr<CleanTargetOracle> base_oracle;
    if (opt.oracle) base_oracle = std::make_unique<CleanTargetOracle>(hadamard(chan.hs(), b.reference_normalized), chan, sched);
    const NoisePredictor& base = opt.oracle ? static_cast<const NoisePredictor&>(*base_oracle) : base_net;

    const BaseNoiseTable table = detail::in_stage("ddmfc", [&] {
      return run_base_chain(ref_rx_vals, base, comp.start_step, comp.sigma_t, sched, chan, rng0);
    });

    FrameList history;
    for (std::size_t i = 1; i < n; ++i) {
      Rng rng(derive_seed(seed, i));
      auto r_rx_n = detail::in_stage("transmit", [&] { return detail::transmit_on_tape(tape, r_n[i], chan, rng); });
      auto r_rx = nn::scale_by(r_rx_n, g_r[i]);
      b.residuals_received[i] = detail::values_of(r_rx);

      const FrameList previous = previous_window(history, ref_rx_vals, m.config().window);
      auto [f_tilde, trace] = detail::in_stage("ddmfc", [&] {
        const SemanticFrame r_rx_vals = detail::values_of(r_rx_n);
        if (opt.oracle) {
          const SemanticFrame target =
              hadamard(chan.hs(), compose_p_frame(b.reference_normalized, b.residuals_normalized[i], comp.lambda));
          const CleanTargetOracle residual = residual_oracle(target, comp.lambda, chan, sched);
          return ddmfc_sample_p(ref_rx_vals, r_rx_vals, previous, table, residual, comp, sched, chan, rng);
        }
        return ddmfc_sample_p(ref_rx_vals, r_rx_vals, previous, table, residual_net, comp, sched, chan, rng);
      });
      b.compensated[i] = f_tilde;
      b.traces[i] = std::move(trace);

      auto f_check = detail::in_stage("motion_decode", [&] {
        auto pred = m.motion_decoder.forward(tape, detail::row_constant(tape, b.compensated[i]), ref_rx_n).predicted;
        return nn::scale_by(pred, g_ref);
      });
      b.predicted[i] = detail::values_of(f_check);
      f_hat[i] = nn::add(f_check, r_rx);
      // Both terms are float-exact in double, so the sum is exact.
      b.reconstructed[i] = axpby(1.0, b.predicted[i], 1.0, b.residuals_received[i]);
      history.push_back(scaled(b.reconstructed[i], 1.0 / b.reference_gain));
    }
  }

  detail::in_stage("semantic_decode", [&] {
    for (std::size_t i = 0; i < n; ++i) {
      out.frame_losses.push_back(codec.coefficient_mse(tape, codec.unproject(tape, f_hat[i]), coeffs[i]));
      if (opt.decode) b.decoded.push_back(codec.decode_pixels(b.reconstructed[i]));
    }
  });
  return out;
}

/// Inference-only GoP transmission.
template <typename T>
GopBundle transmit_gop(const models::ModelBundle<T>& m, const std::vector<std::span<const std::uint8_t>>& frames,
                       std::shared_ptr<const ChannelRealization> channel, const NoiseSchedule& sched,
                       const GopOptions& opt, std::uint64_t seed) {
  nn::Tape<T> tape;
  return run_gop(tape, m, frames, std::move(channel), sched, opt, seed).bundle;
}

/// Fading taps for one GoP at the given SNR (dB; +inf means noiseless).
inline std::shared_ptr<const ChannelRealization> draw_gop_channel(std::size_t code_length, double snr_db,
                                                                  std::uint64_t seed) {
  Rng rng(seed);
  return std::make_shared<const ChannelRealization>(sample_rayleigh(rng, code_length / 2), snr_to_sigma2(snr_db));
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over GoPs and frames of the per-frame MSE between original and
/// reconstructed real-valued frames.
inline double loss_reconstruction(const std::vector<std::vector<std::pair<FrameView, FrameView>>>& gops) {
  if (gops.empty()) throw std::invalid_argument("loss_reconstruction: empty batch");
  double total = 0.0;
  std::size_t frames = 0;
  for (const auto& gop : gops) {
    for (const auto& [x, x_hat] : gop) {
      detail::require_same_length(x, x_hat, "loss_reconstruction");
      if (x.empty()) throw std::invalid_argument("loss_reconstruction: empty frame");
      total += squared_distance(x, x_hat) / static_cast<double>(x.size());
      ++frames;
    }
  }
  if (frames == 0) throw std::invalid_argument("loss_reconstruction: batch has no frames");
  return total / static_cast<double>(frames);
}

/// Pixel-domain loss of decoded bundles, with pixels scaled to [0, 1].
inline double loss_reconstruction(const std::vector<GopBundle>& batch) {
  std::vector<std::vector<SemanticFrame>> store;
  std::vector<std::vector<std::pair<FrameView, FrameView>>> gops;
  store.reserve(batch.size());
  for (const auto& b : batch) {
    if (b.decoded.size() != b.frames.size()) throw std::invalid_argument("loss_reconstruction: bundle not decoded");
    auto& s = store.emplace_back();
    for (std::size_t i = 0; i < b.frames.size(); ++i) {
      SemanticFrame x(b.frames[i].size()), y(b.decoded[i].size());
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = b.frames[i][j] / 255.0;
      for (std::size_t j = 0; j < y.size(); ++j) y[j] = b.decoded[i][j] / 255.0;
      s.push_back(std::move(x));
      s.push_back(std::move(y));
    }
  }
  for (const auto& s : store) {
    auto& g = gops.emplace_back();
    for (std::size_t i = 0; i + 1 < s.size(); i += 2) g.emplace_back(s[i], s[i + 1]);
  }
  return loss_reconstruction(gops);
}

/// Clean semantic inputs of the diffusion objective for one GoP.
struct DiffusionGop {
  SemanticFrame reference;  ///< unit-power f^ref
  FrameList residuals;      ///< unit-power r^i, i >= 2
  FrameList history;        ///< true f^i / g_ref, i >= 2, for the conditioning window
};

inline DiffusionGop diffusion_inputs(const GopBundle& b) {
  DiffusionGop d;
  d.reference = b.reference_normalized;
  for (std::size_t i = 1; i < b.semantic.size(); ++i) {
    d.residuals.push_back(b.residuals_normalized.at(i));
    d.history.push_back(scaled(b.semantic[i], 1.0 / b.reference_gain));
  }
  return d;
}

struct DiffusionLossInfo {
  int t = 0;
  double reference_term = 0.0;
  double p_frame_term = 0.0;
};

/// Decoupled diffusion objective averaged over the frames of a GoP. One
/// timestep and one base noise are shared by the GoP; P-frame noise is
/// sqrt(lambda) eps_b + sqrt(1 - lambda) eps_r. The base prediction enters
/// the P-frame terms (and z'_t) through a stop-gradient. With
/// include_reference = false only the P-frame terms are averaged.
template <typename T>
nn::Var<T> loss_diffusion(nn::Tape<T>& tape, const models::ModelBundle<T>& m, const DiffusionGop& gop,
                          const ChannelRealization& chan, const NoiseSchedule& sched, double lambda, Rng& rng,
                          DiffusionLossInfo* info = nullptr, bool include_reference = true) {
  detail::require_lambda(lambda, "loss_diffusion");
  const std::size_t len = gop.reference.size();
  detail::require_same_length(gop.reference, chan.hs(), "loss_diffusion");
  const int t = static_cast<int>(rng.uniform_int(1, sched.total_steps));
  auto normals = [&] {
    SemanticFrame e(len);
    for (double& v : e) v = rng.normal();
    return e;
  };
  const SemanticFrame eps_b = normals();
  const SemanticFrame z_ref = forward_sample(hadamard(chan.hs(), gop.reference), t, eps_b, chan, sched);
  auto eps_ref = m.base_forward(tape, detail::row_constant(tape, z_ref), t);
  auto ref_term = nn::mse(eps_ref, detail::row_constant(tape, eps_b));
  const SemanticFrame eps_ref_sg = detail::values_of(eps_ref);

  if (!include_reference && gop.residuals.empty()) {
    throw std::invalid_argument("loss_diffusion: no P frames to average");
  }
  std::vector<nn::Var<T>> terms;
  if (include_reference) terms.push_back(ref_term);
  double p_sum = 0.0;
  const double a = std::sqrt(lambda), c = std::sqrt(1.0 - lambda);
  for (std::size_t i = 0; i < gop.residuals.size(); ++i) {
    const SemanticFrame eps = combine_noise(eps_b, normals(), lambda);
    const SemanticFrame f_p = compose_p_frame(gop.reference, gop.residuals[i], lambda);
    const SemanticFrame z_t = forward_sample(hadamard(chan.hs(), f_p), t, eps, chan, sched);
    const SemanticFrame z_prime = remove_base_noise(z_t, eps_ref_sg, lambda, t, sched, chan);
    const FrameList history(gop.history.begin(), gop.history.begin() + static_cast<std::ptrdiff_t>(i));
    std::vector<nn::Var<T>> prev;
    for (const auto& p : previous_window(history, gop.reference, m.config().window)) {
      prev.push_back(detail::row_constant(tape, p));
    }
    auto phi = m.residual_forward(tape, detail::row_constant(tape, z_prime), t, prev);
    auto pred = nn::add(nn::scale(phi, c), detail::row_constant(tape, scaled(eps_ref_sg, a)));
    auto term = nn::mse(pred, detail::row_constant(tape, eps));
    p_sum += static_cast<double>(term.value()[0]);
    terms.push_back(term);
  }
  nn::Var<T> total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = nn::add(total, terms[i]);
  if (info != nullptr) {
    info->t = t;
    info->reference_term = static_cast<double>(ref_term.value()[0]);
    info->p_frame_term = gop.residuals.empty() ? 0.0 : p_sum / static_cast<double>(gop.residuals.size());
  }
  return nn::scale(total, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace wvsc
