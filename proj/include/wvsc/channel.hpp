#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "wvsc/frame.hpp"
#include "wvsc/rng.hpp"

namespace wvsc {

using ComplexVector = std::vector<std::complex<double>>;

/// Draws L/2 i.i.d. CN(0,1) fading taps (real and imaginary parts N(0, 1/2)).
inline ComplexVector sample_rayleigh(Rng& rng, std::size_t half_len) {
  if (half_len == 0) throw std::invalid_argument("sample_rayleigh: half_len must be positive");
  const double s = std::sqrt(0.5);
  ComplexVector h(half_len);
  for (auto& tap : h) {
    const double re = rng.normal() * s;
    const double im = rng.normal() * s;
    tap = {re, im};
  }
  return h;
}

/// Per-real-dimension noise variance for a unit-power complex constellation:
/// SNR = 1 / (2 sigma^2). +inf dB maps to 0.
inline double snr_to_sigma2(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 10.0) / 2.0;
}

/// Real vector [Re; Im] -> complex vector. First half holds real parts.
inline ComplexVector pack_complex(FrameView re_im) {
  if (re_im.size() % 2 != 0) throw std::invalid_argument("pack_complex: length must be even");
  const std::size_t half = re_im.size() / 2;
  ComplexVector out(half);
  for (std::size_t j = 0; j < half; ++j) out[j] = {re_im[j], re_im[j + half]};
  return out;
}

inline SemanticFrame unpack_complex(const ComplexVector& c) {
  const std::size_t half = c.size();
  SemanticFrame out(2 * half);
  for (std::size_t j = 0; j < half; ++j) {
    out[j] = c[j].real();
    out[j + half] = c[j].imag();
  }
  return out;
}

/// One fading + noise draw shared by every frame of a GoP, with the MMSE
/// equalization diagonals precomputed.
///
/// hs[j] = |h_d[j]|^2 / (|h_d[j]|^2 + 2 sigma2), hn[j] = |h_d[j]| / (|h_d[j]|^2 + 2 sigma2),
/// where h_d stacks |h| twice.
class ChannelRealization {
 public:
  ChannelRealization(ComplexVector h, double sigma2) : h_(std::move(h)), sigma2_(sigma2) {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("make_realization: sigma2 must be >= 0");
    if (h_.empty()) throw std::invalid_argument("make_realization: empty fading vector");
    const std::size_t half = h_.size();
    hs_.resize(2 * half);
    hn_.resize(2 * half);
    for (std::size_t j = 0; j < 2 * half; ++j) {
      const double g = std::abs(h_[j % half]);
      const double denom = g * g + 2.0 * sigma2_;
      // |h| = 0 with sigma2 = 0 has no equalizer; the symbol is erased.
      hs_[j] = denom > 0.0 ? g * g / denom : 0.0;
      hn_[j] = denom > 0.0 ? g / denom : 0.0;
    }
  }

  const ComplexVector& h() const { return h_; }
  double sigma2() const { return sigma2_; }
  const SemanticFrame& hs() const { return hs_; }
  const SemanticFrame& hn() const { return hn_; }
  std::size_t length() const { return hs_.size(); }

  /// |h| stacked twice.
  SemanticFrame gain_magnitude() const {
    SemanticFrame g(length());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = std::abs(h_[j % h_.size()]);
    return g;
  }

 private:
  ComplexVector h_;
  double sigma2_;
  SemanticFrame hs_;
  SemanticFrame hn_;
};

inline ChannelRealization make_realization(ComplexVector h, double sigma2) {
  return ChannelRealization(std::move(h), sigma2);
}

/// Real/imag stacking of CN(0, 2 sigma2): i.i.d. N(0, sigma2) per real entry.
inline SemanticFrame draw_channel_noise(Rng& rng, std::size_t length, double sigma2) {
  SemanticFrame n(length);
  const double sd = std::sqrt(sigma2);
  for (double& v : n) v = sd * rng.normal();
  return n;
}

/// hs * f + hn * n with a fresh noise draw. With sigma2 = 0 this returns f
/// exactly (no noise is drawn).
inline SemanticFrame transmit_equalized(FrameView f, const ChannelRealization& chan, Rng& rng) {
  if (f.size() != chan.length()) {
    throw std::invalid_argument("transmit_equalized: frame length " + std::to_string(f.size()) +
                                " does not match channel length " + std::to_string(chan.length()));
  }
  SemanticFrame out(f.size());
  if (chan.sigma2() == 0.0) {
    for (std::size_t j = 0; j < f.size(); ++j) out[j] = chan.hs()[j] * f[j];
    return out;
  }
  const SemanticFrame n = draw_channel_noise(rng, f.size(), chan.sigma2());
  for (std::size_t j = 0; j < f.size(); ++j) out[j] = chan.hs()[j] * f[j] + chan.hn()[j] * n[j];
  return out;
}

}  // namespace wvsc
