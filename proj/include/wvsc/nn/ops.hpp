#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "wvsc/nn/tape.hpp"
#include "wvsc/nn/tensor.hpp"

// Differentiable primitives. All reductions and inner products accumulate in
// double regardless of the storage type.

namespace wvsc::nn {

namespace detail {

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": tape mismatch");
  return *a.tape;
}

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

template <typename T>
void require_rank(Var<T> a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(a.shape()));
  }
}

template <typename T>
bool any_grad(Tape<T>& tape, std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs) {
    if (tape.requires_grad(v)) return true;
  }
  return false;
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b, "add");
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(std::move(out), detail::any_grad(tape, {a, b}), [ia, ib](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b, "sub");
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(std::move(out), detail::any_grad(tape, {a, b}), [ia, ib](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ia, g);
    if (T* gb = tp.grad_buffer(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b, "mul");
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(std::move(out), detail::any_grad(tape, {a, b}), [ia, ib](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& av = tp.value(Var<T>{&tp, ia});
    const Tensor<T>& bv2 = tp.value(Var<T>{&tp, ib});
    if (T* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (T* gb = tp.grad_buffer(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double s) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = static_cast<T>(v * s);
  const std::size_t ia = a.id;
  return tape.push(std::move(out), tape.requires_grad(a), [ia, s](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<T>(g[i] * s);
    }
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, double c) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = static_cast<T>(v + c);
  const std::size_t ia = a.id;
  return tape.push(std::move(out), tape.requires_grad(a),
                   [ia](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(ia, g); });
}

/// a * s where s holds a single value.
template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  Tape<T>& tape = detail::tape_of(a, s, "scale_by");
  if (s.size() != 1) throw std::invalid_argument("scale_by: scale must hold one value");
  const T sv = s.value()[0];
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= sv;
  const std::size_t ia = a.id, is = s.id;
  return tape.push(std::move(out), detail::any_grad(tape, {a, s}), [ia, is](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& av = tp.value(Var<T>{&tp, ia});
    const T sv2 = tp.value(Var<T>{&tp, is})[0];
    if (T* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv2;
    }
    if (T* gs = tp.grad_buffer(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * av[i];
      gs[0] += static_cast<T>(acc);
    }
  });
}

template <typename T>
Var<T> square(Var<T> a) {
  return mul(a, a);
}

template <typename T>
Var<T> sqrt(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.values()) {
    if (v < T{0}) throw std::invalid_argument("sqrt: negative input");
    v = std::sqrt(v);
  }
  const std::size_t ia = a.id, io = tape.size();
  return tape.push(std::move(out), tape.requires_grad(a), [ia, io](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& y = tp.value(Var<T>{&tp, io});
    if (T* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<T>(g[i] * 0.5 / static_cast<double>(y[i]));
    }
  });
}

template <typename T>
Var<T> reciprocal(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.values()) {
    if (v == T{0}) throw std::invalid_argument("reciprocal: zero input");
    v = static_cast<T>(1.0 / static_cast<double>(v));
  }
  const std::size_t ia = a.id, io = tape.size();
  return tape.push(std::move(out), tape.requires_grad(a), [ia, io](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& y = tp.value(Var<T>{&tp, io});
    if (T* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i] * y[i] * y[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, double slope = 0.01) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.values()) {
    if (v < T{0}) v = static_cast<T>(v * slope);
  }
  const std::size_t ia = a.id;
  return tape.push(std::move(out), tape.requires_grad(a), [ia, slope](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& x = tp.value(Var<T>{&tp, ia});
    if (T* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] < T{0} ? static_cast<T>(g[i] * slope) : g[i];
    }
  });
}

/// Value copy that no gradient flows back through.
template <typename T>
Var<T> stop_gradient(Var<T> a) {
  return a.tape->constant(a.value());
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape;
  double acc = 0.0;
  for (const T& v : a.value().values()) acc += v;
  const std::size_t ia = a.id;
  return tape.push(Tensor<T>::scalar(static_cast<T>(acc)), tape.requires_grad(a),
                   [ia](Tape<T>& tp, const Tensor<T>& g) {
                     if (T* ga = tp.grad_buffer(ia)) {
                       const std::size_t n = tp.value(Var<T>{&tp, ia}).size();
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                     }
                   });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Sum of squared differences, fused.
template <typename T>
Var<T> sum_squared_error(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b, "sum_squared_error");
  detail::require_same_shape(a, b, "sum_squared_error");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(Tensor<T>::scalar(static_cast<T>(acc)), detail::any_grad(tape, {a, b}),
                   [ia, ib](Tape<T>& tp, const Tensor<T>& g) {
                     const Tensor<T>& x = tp.value(Var<T>{&tp, ia});
                     const Tensor<T>& y = tp.value(Var<T>{&tp, ib});
                     T* ga = tp.grad_buffer(ia);
                     T* gb = tp.grad_buffer(ib);
                     for (std::size_t i = 0; i < x.size(); ++i) {
                       const T d = static_cast<T>(2.0 * g[0] * (static_cast<double>(x[i]) - y[i]));
                       if (ga) ga[i] += d;
                       if (gb) gb[i] -= d;
                     }
                   });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  return scale(sum_squared_error(a, b), 1.0 / static_cast<double>(a.size()));
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return tape.push(std::move(out), tape.requires_grad(a),
                   [ia](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(ia, g); });
}

/// (n x k) @ (k x m)
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b, "matmul");
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " @ " +
                                shape_string(b.shape()));
  }
  const T* A = a.value().data();
  const T* B = b.value().data();
  Tensor<T> out(Shape{n, m});
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const T* brow = B + p * m;
      for (std::size_t j = 0; j < m; ++j) acc[j] += aip * brow[j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = static_cast<T>(acc[j]);
  }
  const std::size_t ia = a.id, ib = b.id;
  return tape.push(std::move(out), detail::any_grad(tape, {a, b}),
                   [ia, ib, n, k, m](Tape<T>& tp, const Tensor<T>& g) {
                     const T* A2 = tp.value(Var<T>{&tp, ia}).data();
                     const T* B2 = tp.value(Var<T>{&tp, ib}).data();
                     if (T* ga = tp.grad_buffer(ia)) {
                       // dA = G B^T
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           double acc2 = 0.0;
                           const T* brow = B2 + p * m;
                           const T* grow = g.data() + i * m;
                           for (std::size_t j = 0; j < m; ++j) acc2 += static_cast<double>(grow[j]) * brow[j];
                           ga[i * k + p] += static_cast<T>(acc2);
                         }
                       }
                     }
                     if (T* gb = tp.grad_buffer(ib)) {
                       // dB = A^T G
                       std::vector<double> acc2(k * m, 0.0);
                       for (std::size_t i = 0; i < n; ++i) {
                         const T* grow = g.data() + i * m;
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = A2[i * k + p];
                           double* dst = acc2.data() + p * m;
                           for (std::size_t j = 0; j < m; ++j) dst[j] += aip * grow[j];
                         }
                       }
                       for (std::size_t q = 0; q < k * m; ++q) gb[q] += static_cast<T>(acc2[q]);
                     }
                   });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Tape<T>& tape = *a.tape;
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out(Shape{c, r});
  const Tensor<T>& x = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const std::size_t ia = a.id;
  return tape.push(std::move(out), tape.requires_grad(a), [ia, r, c](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  });
}

/// x (n x m) + bias (m) on every row.
template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias) {
  Tape<T>& tape = detail::tape_of(x, bias, "add_row_bias");
  detail::require_rank(x, 2, "add_row_bias");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (bias.size() != m) throw std::invalid_argument("add_row_bias: bias length must equal column count");
  Tensor<T> out = x.value();
  const Tensor<T>& b = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b[j];
  const std::size_t ix = x.id, ib = bias.id;
  return tape.push(std::move(out), detail::any_grad(tape, {x, bias}),
                   [ix, ib, n, m](Tape<T>& tp, const Tensor<T>& g) {
                     tp.accumulate(ix, g);
                     if (T* gb = tp.grad_buffer(ib)) {
                       for (std::size_t j = 0; j < m; ++j) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < n; ++i) acc += g[i * m + j];
                         gb[j] += static_cast<T>(acc);
                       }
                     }
                   });
}

/// x (C x L) + bias (C) broadcast along the length axis.
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  Tape<T>& tape = detail::tape_of(x, bias, "add_channel_bias");
  detail::require_rank(x, 2, "add_channel_bias");
  const std::size_t c = x.shape()[0], l = x.shape()[1];
  if (bias.size() != c) throw std::invalid_argument("add_channel_bias: bias length must equal channel count");
  Tensor<T> out = x.value();
  const Tensor<T>& b = bias.value();
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < l; ++j) out[i * l + j] += b[i];
  const std::size_t ix = x.id, ib = bias.id;
  return tape.push(std::move(out), detail::any_grad(tape, {x, bias}),
                   [ix, ib, c, l](Tape<T>& tp, const Tensor<T>& g) {
                     tp.accumulate(ix, g);
                     if (T* gb = tp.grad_buffer(ib)) {
                       for (std::size_t i = 0; i < c; ++i) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < l; ++j) acc += g[i * l + j];
                         gb[i] += static_cast<T>(acc);
                       }
                     }
                   });
}

/// x (n x in) @ w (in x out) + b (out)
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  return add_row_bias(matmul(x, w), b);
}

/// 1-D convolution over the length axis. x: (Cin x L), w: (Cout x Cin x K),
/// b: (Cout). Zero padding `pad` on both ends.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride = 1, std::size_t pad = 0) {
  Tape<T>& tape = detail::tape_of(x, w, "conv1d");
  detail::tape_of(x, b, "conv1d");
  detail::require_rank(x, 2, "conv1d");
  detail::require_rank(w, 3, "conv1d");
  const std::size_t cin = x.shape()[0], len = x.shape()[1];
  const std::size_t cout = w.shape()[0], ksz = w.shape()[2];
  if (w.shape()[1] != cin) {
    throw std::invalid_argument("conv1d: weight expects " + std::to_string(w.shape()[1]) +
                                " input channels, got " + std::to_string(cin));
  }
  if (b.size() != cout) throw std::invalid_argument("conv1d: bias length must equal output channels");
  if (stride == 0) throw std::invalid_argument("conv1d: stride must be positive");
  if (len + 2 * pad < ksz) throw std::invalid_argument("conv1d: input shorter than kernel");
  const std::size_t lout = (len + 2 * pad - ksz) / stride + 1;
  const long lpad = static_cast<long>(pad);

  // Output positions lo whose tap k lands inside [0, len).
  auto range = [=](std::size_t k) {
    const long off = static_cast<long>(k) - lpad;
    long lo_min = off >= 0 ? 0 : (-off + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    long last = static_cast<long>(len) - 1 - off;
    long lo_max = last < 0 ? -1 : std::min<long>(static_cast<long>(lout) - 1, last / static_cast<long>(stride));
    return std::pair<long, long>{lo_min, lo_max};
  };

  const T* X = x.value().data();
  const T* W = w.value().data();
  const T* B = b.value().data();
  Tensor<T> out(Shape{cout, lout});
  std::vector<double> acc(lout);
  for (std::size_t co = 0; co < cout; ++co) {
    std::fill(acc.begin(), acc.end(), static_cast<double>(B[co]));
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xrow = X + ci * len;
      for (std::size_t k = 0; k < ksz; ++k) {
        const double wv = W[(co * cin + ci) * ksz + k];
        const auto [lo0, lo1] = range(k);
        const long off = static_cast<long>(k) - lpad;
        for (long lo = lo0; lo <= lo1; ++lo) acc[lo] += wv * xrow[lo * static_cast<long>(stride) + off];
      }
    }
    for (std::size_t lo = 0; lo < lout; ++lo) out[co * lout + lo] = static_cast<T>(acc[lo]);
  }

  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  return tape.push(
      std::move(out), detail::any_grad(tape, {x, w, b}),
      [=](Tape<T>& tp, const Tensor<T>& g) {
        const T* X2 = tp.value(Var<T>{&tp, ix}).data();
        const T* W2 = tp.value(Var<T>{&tp, iw}).data();
        const T* G = g.data();
        const long st = static_cast<long>(stride);
        if (T* gb = tp.grad_buffer(ib)) {
          for (std::size_t co = 0; co < cout; ++co) {
            double a = 0.0;
            for (std::size_t lo = 0; lo < lout; ++lo) a += G[co * lout + lo];
            gb[co] += static_cast<T>(a);
          }
        }
        if (T* gw = tp.grad_buffer(iw)) {
          for (std::size_t co = 0; co < cout; ++co) {
            const T* grow = G + co * lout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* xrow = X2 + ci * len;
              for (std::size_t k = 0; k < ksz; ++k) {
                const auto [lo0, lo1] = range(k);
                const long off = static_cast<long>(k) - lpad;
                double a = 0.0;
                for (long lo = lo0; lo <= lo1; ++lo) a += static_cast<double>(grow[lo]) * xrow[lo * st + off];
                gw[(co * cin + ci) * ksz + k] += static_cast<T>(a);
              }
            }
          }
        }
        if (T* gx = tp.grad_buffer(ix)) {
          std::vector<double> accx(cin * len, 0.0);
          for (std::size_t co = 0; co < cout; ++co) {
            const T* grow = G + co * lout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              double* dst = accx.data() + ci * len;
              for (std::size_t k = 0; k < ksz; ++k) {
                const double wv = W2[(co * cin + ci) * ksz + k];
                const auto [lo0, lo1] = range(k);
                const long off = static_cast<long>(k) - lpad;
                for (long lo = lo0; lo <= lo1; ++lo) dst[lo * st + off] += wv * grow[lo];
              }
            }
          }
          for (std::size_t q = 0; q < cin * len; ++q) gx[q] += static_cast<T>(accx[q]);
        }
      });
}

/// Nearest-neighbour upsampling along the length axis of a (C x L) tensor.
template <typename T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
  Tape<T>& tape = *x.tape;
  detail::require_rank(x, 2, "upsample_nearest");
  if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  const std::size_t c = x.shape()[0], l = x.shape()[1];
  Tensor<T> out(Shape{c, l * factor});
  const Tensor<T>& v = x.value();
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < l * factor; ++j) out[i * l * factor + j] = v[i * l + j / factor];
  const std::size_t ix = x.id;
  return tape.push(std::move(out), tape.requires_grad(x), [ix, c, l, factor](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_buffer(ix)) {
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < l; ++j) {
          double a = 0.0;
          for (std::size_t f = 0; f < factor; ++f) a += g[i * l * factor + j * factor + f];
          gx[i * l + j] += static_cast<T>(a);
        }
    }
  });
}

/// Concatenation of rank-2 tensors along axis 0 (rows) or 1 (columns).
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis > 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Tape<T>& tape = *parts.front().tape;
  bool grad = false;
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw std::invalid_argument("concat: tape mismatch");
    detail::require_rank(p, 2, "concat");
    grad = grad || tape.requires_grad(p);
    const std::size_t other = p.shape()[1 - axis];
    const std::size_t fixed = axis == 0 ? cols : rows;
    if (&p != &parts.front() && other != fixed) {
      throw std::invalid_argument("concat: incompatible shapes " + shape_string(parts.front().shape()) + " and " +
                                  shape_string(p.shape()));
    }
    if (axis == 0) {
      rows += p.shape()[0];
      cols = p.shape()[1];
    } else {
      cols += p.shape()[1];
      rows = p.shape()[0];
    }
  }
  Tensor<T> out(Shape{rows, cols});
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    const std::size_t pr = v.dim(0), pc = v.dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        if (axis == 0) {
          out[(off + i) * cols + j] = v[i * pc + j];
        } else {
          out[i * cols + off + j] = v[i * pc + j];
        }
      }
    ids.push_back(p.id);
    offsets.push_back(off);
    off += axis == 0 ? pr : pc;
  }
  return tape.push(std::move(out), grad, [ids, offsets, axis, cols](Tape<T>& tp, const Tensor<T>& g) {
    for (std::size_t q = 0; q < ids.size(); ++q) {
      T* gp = tp.grad_buffer(ids[q]);
      if (!gp) continue;
      const Tensor<T>& v = tp.value(Var<T>{&tp, ids[q]});
      const std::size_t pr = v.dim(0), pc = v.dim(1);
      for (std::size_t i = 0; i < pr; ++i)
        for (std::size_t j = 0; j < pc; ++j) {
          gp[i * pc + j] += axis == 0 ? g[(offsets[q] + i) * cols + j] : g[i * cols + offsets[q] + j];
        }
    }
  });
}

/// Rows [start, start + count) of a rank-2 tensor.
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t start, std::size_t count) {
  Tape<T>& tape = *x.tape;
  detail::require_rank(x, 2, "slice_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (start + count > rows) throw std::invalid_argument("slice_rows: range exceeds row count");
  const Tensor<T>& v = x.value();
  Tensor<T> out(Shape{count, cols},
                std::vector<T>(v.data() + start * cols, v.data() + (start + count) * cols));
  const std::size_t ix = x.id;
  return tape.push(std::move(out), tape.requires_grad(x), [ix, start, cols](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_buffer(ix)) {
      for (std::size_t q = 0; q < g.size(); ++q) gx[start * cols + q] += g[q];
    }
  });
}

/// Row-wise softmax of a rank-2 tensor (max-subtracted).
template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Tape<T>& tape = *x.tape;
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (cols == 0) throw std::invalid_argument("softmax_rows: empty rows");
  const Tensor<T>& v = x.value();
  Tensor<T> out(Shape{rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    const T* r = v.data() + i * cols;
    const double mx = *std::max_element(r, r + cols);
    double z = 0.0;
    std::vector<double> e(cols);
    for (std::size_t j = 0; j < cols; ++j) z += (e[j] = std::exp(static_cast<double>(r[j]) - mx));
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = static_cast<T>(e[j] / z);
  }
  const std::size_t ix = x.id, io = tape.size();
  return tape.push(std::move(out), tape.requires_grad(x), [ix, io, rows, cols](Tape<T>& tp, const Tensor<T>& g) {
    T* gx = tp.grad_buffer(ix);
    if (!gx) return;
    const Tensor<T>& y = tp.value(Var<T>{&tp, io});
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += static_cast<double>(g[i * cols + j]) * y[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        gx[i * cols + j] += static_cast<T>(y[i * cols + j] * (g[i * cols + j] - dot));
      }
    }
  });
}

/// softmax(scale * q k^T) v. When `weights` is given it receives the
/// attention matrix node.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, double scale_factor = 1.0, Var<T>* weights = nullptr) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2) {
    throw std::invalid_argument("attention: q, k, v must be rank 2");
  }
  if (q.shape()[1] != k.shape()[1]) throw std::invalid_argument("attention: query/key widths differ");
  if (k.shape()[0] != v.shape()[0]) throw std::invalid_argument("attention: key/value counts differ");
  Var<T> scores = matmul(q, transpose(k));
  if (scale_factor != 1.0) scores = scale(scores, scale_factor);
  Var<T> a = softmax_rows(scores);
  if (weights != nullptr) *weights = a;
  return matmul(a, v);
}

}  // namespace wvsc::nn
