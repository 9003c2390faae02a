#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wvsc/nn/ops.hpp"
#include "wvsc/nn/params.hpp"
#include "wvsc/rng.hpp"

namespace wvsc::models {

/// Registers name.w (cout x cin x k) and name.b (cout). A zero-initialized
/// layer outputs exactly 0 until trained.
template <typename T>
void add_conv(nn::ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              Rng& rng, bool zero = false) {
  if (store.contains(name + ".w")) return;
  store.add(name + ".w", zero ? nn::Tensor<T>(nn::Shape{cout, cin, k})
                              : nn::glorot_uniform<T>(nn::Shape{cout, cin, k}, cin * k, cout * k, rng));
  store.add(name + ".b", nn::Tensor<T>(nn::Shape{cout}));
}

template <typename T>
nn::Var<T> conv(nn::Tape<T>& tape, nn::ParamStore<T>& store, const std::string& name, nn::Var<T> x,
                std::size_t stride = 1) {
  auto& w = store.get(name + ".w");
  const std::size_t k = w.value.dim(2);
  return nn::conv1d(x, tape.param(w), tape.param(store.get(name + ".b")), stride, k / 2);
}

/// Registers name.w (in x out) and name.b (out).
template <typename T>
void add_dense(nn::ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  if (store.contains(name + ".w")) return;
  store.add(name + ".w", nn::glorot_uniform<T>(nn::Shape{in, out}, in, out, rng));
  store.add(name + ".b", nn::Tensor<T>(nn::Shape{out}));
}

template <typename T>
nn::Var<T> dense(nn::Tape<T>& tape, nn::ParamStore<T>& store, const std::string& name, nn::Var<T> x) {
  return nn::dense(x, tape.param(store.get(name + ".w")), tape.param(store.get(name + ".b")));
}

/// Sinusoidal timestep embedding: [sin(t w_i), cos(t w_i)], w_i = 10000^(-i / half).
inline std::vector<double> timestep_embedding(int t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<double> e(dim, 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(t * w);
    e[half + i] = std::cos(t * w);
  }
  return e;
}

}  // namespace wvsc::models
