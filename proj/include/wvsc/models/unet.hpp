#pragma once

#include <stdexcept>
#include <string>

#include "wvsc/models/layers.hpp"

namespace wvsc::models {

struct UNetConfig {
  std::size_t length = 128;
  std::size_t c0 = 32;
  std::size_t c1 = 64;
  std::size_t time_dim = 32;
  std::size_t kernel = 3;
};

/// 1-D U-Net over a length-L vector: stem, two stride-2 down stages, two
/// nearest-upsample stages with skip concatenation, 1-channel head. The time
/// embedding and a learned positional map are added after the stem block.
template <typename T>
class UNetLite {
 public:
  UNetLite(const UNetConfig& cfg, nn::ParamStore<T>& store, const std::string& prefix, Rng& rng)
      : cfg_(cfg), store_(store), p_(prefix) {
    if (cfg.length % 4 != 0 || cfg.length == 0) throw std::invalid_argument("UNetLite: length must be a multiple of 4");
    const auto k = cfg.kernel;
    add_conv(store, p_ + ".stem", 1, cfg.c0, k, rng);
    add_dense(store, p_ + ".time", cfg.time_dim, cfg.c0, rng);
    if (!store.contains(p_ + ".pos")) store.add(p_ + ".pos", nn::Tensor<T>(nn::Shape{cfg.c0, cfg.length}));
    add_conv(store, p_ + ".enc0", cfg.c0, cfg.c0, k, rng);
    add_conv(store, p_ + ".down1", cfg.c0, cfg.c1, k, rng);
    add_conv(store, p_ + ".enc1", cfg.c1, cfg.c1, k, rng);
    add_conv(store, p_ + ".down2", cfg.c1, cfg.c1, k, rng);
    add_conv(store, p_ + ".mid", cfg.c1, cfg.c1, k, rng);
    add_conv(store, p_ + ".up1", 2 * cfg.c1, cfg.c1, k, rng);
    add_conv(store, p_ + ".up2", cfg.c1 + cfg.c0, cfg.c0, k, rng);
    add_conv(store, p_ + ".head", cfg.c0, 1, k, rng);
  }

  const UNetConfig& config() const { return cfg_; }

  /// x: any node with L entries; returns a (1 x L) node.
  nn::Var<T> forward(nn::Tape<T>& tape, nn::Var<T> x, int t) const {
    if (x.size() != cfg_.length) {
      throw std::invalid_argument("UNetLite: input length " + std::to_string(x.size()) + ", expected " +
                                  std::to_string(cfg_.length));
    }
    using nn::leaky_relu;
    auto& s = store_;
    auto h = leaky_relu(conv(tape, s, p_ + ".stem", nn::reshape(x, {1, cfg_.length})));
    const auto emb = timestep_embedding(t, cfg_.time_dim);
    auto temb = dense(tape, s, p_ + ".time",
                      tape.constant(nn::Tensor<T>::template from<double>(nn::Shape{1, cfg_.time_dim}, emb)));
    h = nn::add(nn::add_channel_bias(h, nn::reshape(temb, {cfg_.c0})), tape.param(s.get(p_ + ".pos")));
    auto s0 = leaky_relu(conv(tape, s, p_ + ".enc0", h));
    auto d1 = leaky_relu(conv(tape, s, p_ + ".down1", s0, 2));
    auto s1 = leaky_relu(conv(tape, s, p_ + ".enc1", d1));
    auto d2 = leaky_relu(conv(tape, s, p_ + ".down2", s1, 2));
    auto m = leaky_relu(conv(tape, s, p_ + ".mid", d2));
    auto u1 = leaky_relu(conv(tape, s, p_ + ".up1", nn::concat<T>({nn::upsample_nearest(m, 2), s1}, 0)));
    auto u2 = leaky_relu(conv(tape, s, p_ + ".up2", nn::concat<T>({nn::upsample_nearest(u1, 2), s0}, 0)));
    return conv(tape, s, p_ + ".head", u2);
  }

 private:
  UNetConfig cfg_;
  nn::ParamStore<T>& store_;
  std::string p_;
};

}  // namespace wvsc::models
