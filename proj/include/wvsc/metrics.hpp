#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wvsc {

inline constexpr double kPsnrCapDb = 99.0;

/// 10 log10(peak^2 / MSE); identical inputs report the 99 dB cap.
inline double psnr(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, double peak = 255.0) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("psnr: size mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw std::invalid_argument("psnr: empty frames");
  std::uint64_t se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int d = static_cast<int>(a[i]) - static_cast<int>(b[i]);
    se += static_cast<std::uint64_t>(d * d);
  }
  if (se == 0) return kPsnrCapDb;
  const double mse = static_cast<double>(se) / static_cast<double>(a.size());
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

struct MsSsimOptions {
  int scales = 5;
  bool allow_scale_reduction = true;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 255.0;
};

namespace detail {

inline const std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kSsimWindow = 11;

inline const std::array<double, kSsimWindow>& gaussian_window() {
  static const std::array<double, kSsimWindow> w = [] {
    std::array<double, kSsimWindow> g{};
    double s = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double x = i - kSsimWindow / 2;
      g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
      s += g[i];
    }
    for (double& v : g) v /= s;
    return g;
  }();
  return w;
}

struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

/// Separable Gaussian filter, "valid" region only.
inline Plane filter_valid(const Plane& p) {
  const auto& g = gaussian_window();
  const int ow = p.w - kSsimWindow + 1, oh = p.h - kSsimWindow + 1;
  Plane tmp{ow, p.h, std::vector<double>(static_cast<std::size_t>(ow) * p.h)};
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * p.at(x + k, y);
      tmp.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  Plane out{ow, oh, std::vector<double>(static_cast<std::size_t>(ow) * oh)};
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * tmp.at(x, y + k);
      out.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

inline Plane product(const Plane& a, const Plane& b) {
  Plane out{a.w, a.h, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
inline Plane downsample(const Plane& p) {
  Plane out{p.w / 2, p.h / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (p.at(2 * x, 2 * y) + p.at(2 * x + 1, 2 * y) + p.at(2 * x, 2 * y + 1) + p.at(2 * x + 1, 2 * y + 1));
  return out;
}

/// Mean contrast-structure term and mean full SSIM over the valid region.
inline std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, double c1, double c2) {
  const Plane mu_a = filter_valid(a), mu_b = filter_valid(b);
  const Plane e_aa = filter_valid(product(a, a)), e_bb = filter_valid(product(b, b)),
              e_ab = filter_valid(product(a, b));
  double cs_sum = 0.0, ssim_sum = 0.0;
  for (std::size_t i = 0; i < mu_a.v.size(); ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma, vb = e_bb.v[i] - mb * mb, cov = e_ab.v[i] - ma * mb;
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    cs_sum += cs;
    ssim_sum += cs * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
  }
  const double n = static_cast<double>(mu_a.v.size());
  return {cs_sum / n, ssim_sum / n};
}

}  // namespace detail

/// Number of scales usable for a frame: each scale needs at least an 11x11
/// window after halving.
inline int ms_ssim_scales(int width, int height, int requested = 5) {
  int s = 0;
  int w = width, h = height;
  while (s < requested && w >= detail::kSsimWindow && h >= detail::kSsimWindow) {
    ++s;
    w /= 2;
    h /= 2;
  }
  return s;
}

/// MS-SSIM of one channel plane pair (row-major, width x height). Negative
/// per-scale terms are clamped to 0 so the product stays in [0, 1].
inline double ms_ssim_plane(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, int width, int height,
                            const MsSsimOptions& opt = {}) {
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (width <= 0 || height <= 0 || a.size() != n || b.size() != n) {
    throw std::invalid_argument("ms_ssim: plane dimensions do not match buffer sizes");
  }
  if (opt.scales < 1 || opt.scales > 5) throw std::invalid_argument("ms_ssim: scales must lie in [1, 5]");
  const int usable = ms_ssim_scales(width, height, opt.scales);
  if (usable < opt.scales && !opt.allow_scale_reduction) {
    throw std::invalid_argument("ms_ssim: " + std::to_string(width) + "x" + std::to_string(height) +
                                " is too small for " + std::to_string(opt.scales) + " scales");
  }
  if (usable == 0) throw std::invalid_argument("ms_ssim: frame smaller than the 11x11 window");
  double wsum = 0.0;
  for (int s = 0; s < usable; ++s) wsum += detail::kMsSsimWeights[s];

  detail::Plane pa{width, height, std::vector<double>(a.begin(), a.end())};
  detail::Plane pb{width, height, std::vector<double>(b.begin(), b.end())};
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak), c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  double out = 1.0;
  for (int s = 0; s < usable; ++s) {
    const auto [cs, full] = detail::ssim_terms(pa, pb, c1, c2);
    const double term = std::clamp(s + 1 == usable ? full : cs, 0.0, 1.0);
    out *= std::pow(term, detail::kMsSsimWeights[s] / wsum);
    if (s + 1 < usable) {
      pa = detail::downsample(pa);
      pb = detail::downsample(pb);
    }
  }
  return std::clamp(out, 0.0, 1.0);
}

/// Planar RGB frames; average of the per-channel values.
inline double ms_ssim(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, int width, int height,
                      const MsSsimOptions& opt = {}) {
  const std::size_t plane = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (a.size() != b.size() || a.size() != 3 * plane) {
    throw std::invalid_argument("ms_ssim: expected two planar RGB frames of " + std::to_string(width) + "x" +
                                std::to_string(height));
  }
  double s = 0.0;
  for (std::size_t c = 0; c < 3; ++c) s += ms_ssim_plane(a.subspan(c * plane, plane), b.subspan(c * plane, plane),
                                                         width, height, opt);
  return s / 3.0;
}

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MetricSummary summarize(std::span<const double> v) {
  MetricSummary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

/// Per-frame metrics with aggregates.
struct MetricReport {
  std::vector<double> psnr_db;
  std::vector<double> ms_ssim;

  void add(double p, double s) {
    psnr_db.push_back(p);
    ms_ssim.push_back(s);
  }
  MetricSummary psnr_summary() const { return summarize(psnr_db); }
  MetricSummary ms_ssim_summary() const { return summarize(ms_ssim); }
};

}  // namespace wvsc
