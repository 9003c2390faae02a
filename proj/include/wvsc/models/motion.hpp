#pragma once

#include <stdexcept>
#include <string>

#include "wvsc/models/layers.hpp"

namespace wvsc::models {

struct MotionConfig {
  std::size_t length = 128;
  std::size_t channels = 16;
  std::size_t kernel = 3;
};

template <typename T>
struct MotionOutput {
  nn::Var<T> offset;     ///< O_i, (1 x L)
  nn::Var<T> predicted;  ///< predicted frame, (1 x L)
};

/// Motion estimation & compensation coder on semantic frames.
/// Estimation: [f; f_ref] -> conv+LReLU x2 -> conv -> O.
/// Compensation conditions on O: [O; f_ref] -> conv+LReLU -> residual block ->
/// zero-initialized head, so an untrained coder predicts 0.
template <typename T>
class MotionCoder {
 public:
  MotionCoder(const MotionConfig& cfg, nn::ParamStore<T>& store, const std::string& prefix, Rng& rng)
      : cfg_(cfg), store_(store), p_(prefix) {
    const auto c = cfg.channels, k = cfg.kernel;
    add_conv(store, p_ + ".est0", 2, c, k, rng);
    add_conv(store, p_ + ".est1", c, c, k, rng);
    add_conv(store, p_ + ".est2", c, 1, k, rng);
    add_conv(store, p_ + ".comp0", 2, c, k, rng);
    add_conv(store, p_ + ".res0", c, c, k, rng);
    add_conv(store, p_ + ".res1", c, c, k, rng);
    add_conv(store, p_ + ".head", c, 1, k, rng, /*zero=*/true);
  }

  MotionOutput<T> forward(nn::Tape<T>& tape, nn::Var<T> frame, nn::Var<T> reference) const {
    if (frame.size() != cfg_.length || reference.size() != cfg_.length) {
      throw std::invalid_argument("motion coder: frame length mismatch (" + std::to_string(frame.size()) + ", " +
                                  std::to_string(reference.size()) + " vs " + std::to_string(cfg_.length) + ")");
    }
    using nn::leaky_relu;
    auto& s = store_;
    const nn::Shape row{1, cfg_.length};
    auto ref = nn::reshape(reference, row);
    auto x = nn::concat<T>({nn::reshape(frame, row), ref}, 0);
    auto h = leaky_relu(conv(tape, s, p_ + ".est0", x));
    h = leaky_relu(conv(tape, s, p_ + ".est1", h));
    auto offset = conv(tape, s, p_ + ".est2", h);
    auto g = leaky_relu(conv(tape, s, p_ + ".comp0", nn::concat<T>({offset, ref}, 0)));
    auto r = conv(tape, s, p_ + ".res1", leaky_relu(conv(tape, s, p_ + ".res0", g)));
    g = leaky_relu(nn::add(g, r));
    return {offset, conv(tape, s, p_ + ".head", g)};
  }

 private:
  MotionConfig cfg_;
  nn::ParamStore<T>& store_;
  std::string p_;
};

}  // namespace wvsc::models
