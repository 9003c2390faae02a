#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "wvsc/nn/tensor.hpp"
#include "wvsc/rng.hpp"

namespace wvsc::nn {

/// A named trainable tensor with its gradient slot and AdamW moments.
/// `has_grad` is false until a backward pass reaches the parameter, which lets
/// the optimizer skip parameters cut off by stop_gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> first_moment;
  Tensor<T> second_moment;
  bool has_grad = false;
  bool trainable = true;

  void zero_grad() {
    grad.fill(T{0});
    has_grad = false;
  }
};

template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (params_.contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    Parameter<T> p;
    p.name = name;
    p.grad = Tensor<T>(value.shape());
    p.first_moment = Tensor<T>(value.shape());
    p.second_moment = Tensor<T>(value.shape());
    p.value = std::move(value);
    return params_.emplace(name, std::move(p)).first->second;
  }

  bool contains(const std::string& name) const { return params_.contains(name); }

  Parameter<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
    return it->second;
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  /// Marks every parameter whose name starts with `prefix`.
  std::size_t set_trainable(const std::string& prefix, bool trainable) {
    std::size_t n = 0;
    for (auto& [name, p] : params_) {
      if (name.starts_with(prefix)) {
        p.trainable = trainable;
        ++n;
      }
    }
    return n;
  }

  void set_all_trainable(bool trainable) {
    for (auto& [_, p] : params_) p.trainable = trainable;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  long long& step_count() { return steps_; }
  long long step_count() const { return steps_; }

 private:
  std::map<std::string, Parameter<T>> params_;
  long long steps_ = 0;
};

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return t;
}

}  // namespace wvsc::nn
