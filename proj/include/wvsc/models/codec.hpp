#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wvsc/nn/ops.hpp"
#include "wvsc/nn/params.hpp"

namespace wvsc::models {

namespace detail {

/// Orthonormal 8-point DCT-II matrix, row k = basis k.
inline const std::array<double, 64>& dct8() {
  static const std::array<double, 64> m = [] {
    std::array<double, 64> out{};
    for (int k = 0; k < 8; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) out[k * 8 + n] = scale * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
    return out;
  }();
  return m;
}

/// JPEG zig-zag scan: position -> (row * 8 + col).
inline const std::array<int, 64>& zigzag8() {
  static const std::array<int, 64> z = [] {
    std::array<int, 64> out{};
    int idx = 0;
    for (int s = 0; s < 15; ++s) {
      if (s % 2 == 0) {
        for (int r = std::min(s, 7); r >= std::max(0, s - 7); --r) out[idx++] = r * 8 + (s - r);
      } else {
        for (int r = std::max(0, s - 7); r <= std::min(s, 7); ++r) out[idx++] = r * 8 + (s - r);
      }
    }
    return out;
  }();
  return z;
}

}  // namespace detail

struct CodecConfig {
  int width = 32;
  int height = 32;
  int code_length = 128;
  int coeffs_per_block = 6;
};

/// Output of the analysis transform for one frame.
struct Coefficients {
  std::vector<double> kept;   ///< D retained coefficients in importance order
  double dropped_energy = 0;  ///< energy of discarded coefficients
};

/// Toy semantic codec: 8x8 block DCT of pixels mapped to [-0.5, 0.5],
/// zig-zag truncation to K coefficients per block, then a trainable linear
/// map to length L. Retained coefficients are ordered by zig-zag rank first,
/// so rank-0 (DC) terms of every block and channel lead.
///
/// The encoder output is normalized to unit power per complex symbol; the gain
/// sqrt(2 ||y||^2 / L) travels as side information.
template <typename T>
class SemanticCodec {
 public:
  SemanticCodec(const CodecConfig& cfg, nn::ParamStore<T>& store, const std::string& prefix = "jscc")
      : cfg_(cfg), store_(store), prefix_(prefix) {
    if (cfg.width <= 0 || cfg.height <= 0 || cfg.width % 8 != 0 || cfg.height % 8 != 0) {
      throw std::invalid_argument("codec: frame dimensions must be positive multiples of 8");
    }
    if (cfg.code_length <= 0 || cfg.code_length % 2 != 0) {
      throw std::invalid_argument("codec: code length L must be positive and even");
    }
    if (cfg.code_length > 2 * cfg.width * cfg.height * 3) {
      throw std::invalid_argument("codec: code length L must not exceed 2 * H * W * 3");
    }
    if (cfg.coeffs_per_block < 1 || cfg.coeffs_per_block > 64) {
      throw std::invalid_argument("codec: coefficients per block must lie in [1, 64]");
    }
    blocks_x_ = cfg.width / 8;
    blocks_y_ = cfg.height / 8;
    const std::size_t d = coefficient_count(), l = static_cast<std::size_t>(cfg.code_length);
    if (!store.contains(enc_name())) {
      // Selection matrix: code entry l carries coefficient l.
      nn::Tensor<T> w(nn::Shape{d, l});
      for (std::size_t i = 0; i < std::min(d, l); ++i) w.at(i, i) = T{1};
      store.add(enc_name(), w);
      store.add(dec_name(), transpose_of(w));
    }
  }

  const CodecConfig& config() const { return cfg_; }
  std::size_t code_length() const { return static_cast<std::size_t>(cfg_.code_length); }
  std::size_t coefficient_count() const {
    return static_cast<std::size_t>(blocks_x_ * blocks_y_ * 3 * cfg_.coeffs_per_block);
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(3 * cfg_.width * cfg_.height); }
  std::string enc_name() const { return prefix_ + ".encoder.w"; }
  std::string dec_name() const { return prefix_ + ".decoder.w"; }

  /// Forward DCT and truncation of a planar 8-bit frame.
  Coefficients analyze(std::span<const std::uint8_t> frame) const {
    require_frame(frame.size());
    const auto& dct = detail::dct8();
    const auto& zz = detail::zigzag8();
    const int k_keep = cfg_.coeffs_per_block;
    const std::size_t nblk = static_cast<std::size_t>(blocks_x_ * blocks_y_ * 3);
    Coefficients out;
    out.kept.assign(coefficient_count(), 0.0);
    std::array<double, 64> px{}, tmp{}, c{};
    for (int ch = 0; ch < 3; ++ch) {
      for (int by = 0; by < blocks_y_; ++by) {
        for (int bx = 0; bx < blocks_x_; ++bx) {
          for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
              const std::size_t idx = static_cast<std::size_t>(ch) * cfg_.width * cfg_.height +
                                      static_cast<std::size_t>(by * 8 + y) * cfg_.width + (bx * 8 + x);
              px[y * 8 + x] = frame[idx] / 255.0 - 0.5;
            }
          // c = D px D^T
          for (int k = 0; k < 8; ++k)
            for (int x = 0; x < 8; ++x) {
              double a = 0.0;
              for (int y = 0; y < 8; ++y) a += dct[k * 8 + y] * px[y * 8 + x];
              tmp[k * 8 + x] = a;
            }
          for (int k = 0; k < 8; ++k)
            for (int j = 0; j < 8; ++j) {
              double a = 0.0;
              for (int x = 0; x < 8; ++x) a += tmp[k * 8 + x] * dct[j * 8 + x];
              c[k * 8 + j] = a;
            }
          const std::size_t block = static_cast<std::size_t>((ch * blocks_y_ + by) * blocks_x_ + bx);
          for (int r = 0; r < 64; ++r) {
            const double v = c[zz[r]];
            if (r < k_keep) {
              out.kept[static_cast<std::size_t>(r) * nblk + block] = v;
            } else {
              out.dropped_energy += v * v;
            }
          }
        }
      }
    }
    return out;
  }

  /// Inverse of analyze with dropped coefficients set to zero; returns
  /// pixels in [-0.5, 0.5] units (unclamped), planar.
  std::vector<double> synthesize(std::span<const double> kept) const {
    if (kept.size() != coefficient_count()) throw std::invalid_argument("codec: coefficient count mismatch");
    const auto& dct = detail::dct8();
    const auto& zz = detail::zigzag8();
    const std::size_t nblk = static_cast<std::size_t>(blocks_x_ * blocks_y_ * 3);
    std::vector<double> out(pixel_count(), 0.0);
    std::array<double, 64> c{}, tmp{};
    for (int ch = 0; ch < 3; ++ch) {
      for (int by = 0; by < blocks_y_; ++by) {
        for (int bx = 0; bx < blocks_x_; ++bx) {
          c.fill(0.0);
          const std::size_t block = static_cast<std::size_t>((ch * blocks_y_ + by) * blocks_x_ + bx);
          for (int r = 0; r < cfg_.coeffs_per_block; ++r) c[zz[r]] = kept[static_cast<std::size_t>(r) * nblk + block];
          // px = D^T c D
          for (int y = 0; y < 8; ++y)
            for (int j = 0; j < 8; ++j) {
              double a = 0.0;
              for (int k = 0; k < 8; ++k) a += dct[k * 8 + y] * c[k * 8 + j];
              tmp[y * 8 + j] = a;
            }
          for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
              double a = 0.0;
              for (int j = 0; j < 8; ++j) a += tmp[y * 8 + j] * dct[j * 8 + x];
              out[static_cast<std::size_t>(ch) * cfg_.width * cfg_.height +
                  static_cast<std::size_t>(by * 8 + y) * cfg_.width + (bx * 8 + x)] = a;
            }
        }
      }
    }
    return out;
  }

  static std::vector<std::uint8_t> to_pixels(std::span<const double> centered) {
    std::vector<std::uint8_t> out(centered.size());
    for (std::size_t i = 0; i < centered.size(); ++i) {
      const double v = std::round((centered[i] + 0.5) * 255.0);
      out[i] = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
    return out;
  }

  /// Unnormalized code y = c W_enc as a (1 x L) node.
  nn::Var<T> project(nn::Tape<T>& tape, const Coefficients& c) const {
    const auto row = nn::Tensor<T>::template from<double>(nn::Shape{1, coefficient_count()}, c.kept);
    return nn::matmul(tape.constant(row), tape.param(store_.get(enc_name())));
  }

  /// Coefficient estimate from an unnormalized code, (1 x D).
  nn::Var<T> unproject(nn::Tape<T>& tape, nn::Var<T> y) const {
    return nn::matmul(y, tape.param(store_.get(dec_name())));
  }

  /// Per-frame pixel MSE in [-0.5, 0.5] units via Parseval on the block DCT.
  nn::Var<T> coefficient_mse(nn::Tape<T>& tape, nn::Var<T> c_hat, const Coefficients& c) const {
    const auto target = nn::Tensor<T>::template from<double>(nn::Shape{1, coefficient_count()}, c.kept);
    auto sse = nn::sum_squared_error(c_hat, tape.constant(target));
    return nn::scale(nn::add_scalar(sse, c.dropped_energy), 1.0 / static_cast<double>(pixel_count()));
  }

  /// Decode a received code (already multiplied by its gain) to 8-bit pixels.
  std::vector<std::uint8_t> decode_pixels(std::span<const double> y) const {
    if (y.size() != code_length()) throw std::invalid_argument("codec: code length mismatch in decode");
    const auto& w = store_.get(dec_name()).value;
    const std::size_t d = coefficient_count(), l = code_length();
    std::vector<double> c(d, 0.0);
    for (std::size_t i = 0; i < l; ++i) {
      const double yi = y[i];
      const T* row = w.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) c[j] += yi * row[j];
    }
    return to_pixels(synthesize(c));
  }

 private:
  void require_frame(std::size_t bytes) const {
    if (bytes != pixel_count()) {
      throw std::invalid_argument("codec: frame has " + std::to_string(bytes) + " bytes, expected " +
                                  std::to_string(pixel_count()));
    }
  }

  static nn::Tensor<T> transpose_of(const nn::Tensor<T>& w) {
    const std::size_t r = w.dim(0), c = w.dim(1);
    nn::Tensor<T> t(nn::Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) t.at(j, i) = w.at(i, j);
    return t;
  }

  CodecConfig cfg_;
  nn::ParamStore<T>& store_;
  std::string prefix_;
  int blocks_x_ = 0;
  int blocks_y_ = 0;
};

/// Unit-power normalization: returns (x / g, g) with g = sqrt(2 ||x||^2 / L)
/// as tape nodes; a zero vector is passed through with g = 1.
template <typename T>
std::pair<nn::Var<T>, nn::Var<T>> power_normalize(nn::Var<T> x) {
  nn::Tape<T>& tape = *x.tape;
  const double l = static_cast<double>(x.size());
  double energy = 0.0;
  for (const T& v : x.value().values()) energy += static_cast<double>(v) * v;
  if (energy == 0.0) return {x, tape.constant(nn::Tensor<T>::scalar(T{1}))};
  auto g = nn::sqrt(nn::scale(nn::sum_squared_error(x, tape.constant(nn::Tensor<T>(x.shape()))), 2.0 / l));
  return {nn::scale_by(x, nn::reciprocal(g)), g};
}

}  // namespace wvsc::models
