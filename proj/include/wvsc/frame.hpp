#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wvsc {

/// A length-L real semantic vector: encoder outputs, residuals, received and
/// reconstructed frames all share this representation.
using SemanticFrame = std::vector<double>;
using FrameView = std::span<const double>;

/// Previously reconstructed frames, ordered oldest to newest.
using FrameList = std::vector<SemanticFrame>;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline void require_same_length(FrameView a, FrameView b, const char* where) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(where) + ": length mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}

}  // namespace detail

/// alpha * a + beta * b
inline SemanticFrame axpby(double alpha, FrameView a, double beta, FrameView b) {
  detail::require_same_length(a, b, "axpby");
  SemanticFrame out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = alpha * a[j] + beta * b[j];
  return out;
}

inline SemanticFrame hadamard(FrameView a, FrameView b) {
  detail::require_same_length(a, b, "hadamard");
  SemanticFrame out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] * b[j];
  return out;
}

inline SemanticFrame scaled(FrameView a, double s) {
  SemanticFrame out(a.begin(), a.end());
  for (double& v : out) v *= s;
  return out;
}

inline double squared_norm(FrameView a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  return acc;
}

inline double squared_distance(FrameView a, FrameView b) {
  detail::require_same_length(a, b, "squared_distance");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
  return acc;
}

/// ||a - b|| / ||b||, with the denominator floored at 1e-300.
inline double relative_error(FrameView a, FrameView b) {
  return std::sqrt(squared_distance(a, b)) / std::max(std::sqrt(squared_norm(b)), 1e-300);
}

/// Average power per complex symbol when the real vector stacks real parts
/// then imaginary parts: (2/L) * ||a||^2.
inline double power_per_complex_symbol(FrameView a) {
  return a.empty() ? 0.0 : 2.0 * squared_norm(a) / static_cast<double>(a.size());
}

}  // namespace wvsc
