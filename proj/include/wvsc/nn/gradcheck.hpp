#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wvsc/nn/ops.hpp"
#include "wvsc/rng.hpp"

namespace wvsc::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

namespace detail {

/// |a - n| / max(|a|, |n|, floor); floor guards entries that are ~0 relative
/// to the largest gradient.
inline double grad_rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

inline std::vector<std::size_t> pick_indices(std::size_t n, std::size_t max_checks, Rng* rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max_checks == 0 || max_checks >= n || rng == nullptr) return idx;
  for (std::size_t i = 0; i < max_checks; ++i) {
    const auto j = i + static_cast<std::size_t>(rng->uniform_int(0, static_cast<std::int64_t>(n - i - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_checks);
  return idx;
}

}  // namespace detail

/// Central differences of a scalar function of tensor inputs against the
/// tape gradient.
inline GradCheckResult check_input_gradients(
    const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& f,
    const std::vector<Tensor<double>>& inputs, double h = 1e-4, std::size_t max_checks = 0, Rng* rng = nullptr) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.input(x));
    tape.backward(f(tape, vars));
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value()[0];
  };
  double gmax = 0.0;
  for (const auto& g : analytic)
    for (double v : g.values()) gmax = std::max(gmax, std::abs(v));
  const double floor = std::max(1e-4 * gmax, 1e-10);
  GradCheckResult res;
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i : detail::pick_indices(xs[k].size(), max_checks, rng)) {
      const double orig = xs[k][i];
      xs[k][i] = orig + h;
      const double up = eval(xs);
      xs[k][i] = orig - h;
      const double down = eval(xs);
      xs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      res.max_rel_error = std::max(res.max_rel_error, detail::grad_rel_error(analytic[k][i], numeric, floor));
      ++res.checked;
    }
  }
  return res;
}

/// Same check over every parameter in a store; `loss` rebuilds the graph on a
/// fresh tape from the store's current values.
inline GradCheckResult check_param_gradients(ParamStore<double>& store,
                                             const std::function<Var<double>(Tape<double>&)>& loss,
                                             double h = 1e-4, std::size_t max_per_param = 0, Rng* rng = nullptr) {
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  double gmax = 0.0;
  for (const auto& [_, p] : store)
    for (double v : p.grad.values()) gmax = std::max(gmax, std::abs(v));
  const double floor = std::max(1e-4 * gmax, 1e-10);
  auto eval = [&] {
    Tape<double> tape;
    return loss(tape).value()[0];
  };
  GradCheckResult res;
  for (auto& [_, p] : store) {
    for (std::size_t i : detail::pick_indices(p.value.size(), max_per_param, rng)) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = eval();
      p.value[i] = orig - h;
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      res.max_rel_error = std::max(res.max_rel_error, detail::grad_rel_error(p.grad[i], numeric, floor));
      ++res.checked;
    }
  }
  store.zero_grad();
  return res;
}

}  // namespace wvsc::nn
