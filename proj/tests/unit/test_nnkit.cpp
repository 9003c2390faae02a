#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "wvsc/nn/gradcheck.hpp"
#include "wvsc/nn/optim.hpp"
#include "wvsc/nn/weights_io.hpp"

using namespace wvsc;
using namespace wvsc::nn;

namespace {

Tensor<double> randt(Rng& rng, Shape s) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

// Scalar probe <out, R> with a fixed random R.
Var<double> probe(Tape<double>& tape, Var<double> out, std::uint64_t seed = 17) {
  Rng rng(seed);
  return sum(mul(out, tape.constant(randt(rng, out.shape()))));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST(Tensor, ShapeContract) {
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), std::invalid_argument);
  Tensor<float> t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Ops, SoftmaxUniform) {
  Tape<double> tape;
  const auto y = softmax_rows(tape.constant(Tensor<double>(Shape{1, 3}, 0.0)));
  for (double v : y.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Ops, SoftmaxRowStochastic) {
  Rng rng(1);
  Tape<double> tape;
  const auto y = softmax_rows(tape.constant(randt(rng, {7, 13})));
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 13; ++j) {
      EXPECT_GE(y.value().at(i, j), 0.0);
      s += y.value().at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Ops, LeakyReluSlope) {
  Tape<float> tape;
  const auto y = leaky_relu(tape.constant(Tensor<float>(Shape{2}, std::vector<float>{-1.0f, 2.0f})));
  EXPECT_FLOAT_EQ(y.value()[0], -0.01f);
  EXPECT_FLOAT_EQ(y.value()[1], 2.0f);
}

TEST(Ops, ShapeMismatchThrows) {
  Tape<double> tape;
  const auto a = tape.constant(Tensor<double>(Shape{2, 3}));
  const auto b = tape.constant(Tensor<double>(Shape{3, 2}));
  EXPECT_THROW(add(a, b), std::invalid_argument);
  EXPECT_THROW(mul(a, b), std::invalid_argument);
  EXPECT_THROW(matmul(a, a), std::invalid_argument);
  EXPECT_THROW(conv1d(a, tape.constant(Tensor<double>(Shape{4, 3, 3})), tape.constant(Tensor<double>(Shape{4}))),
               std::invalid_argument);
  EXPECT_THROW(concat<double>({a, b}, 0), std::invalid_argument);
}

TEST(Backward, SquareDerivative) {
  Tape<double> tape;
  const auto x = tape.input(Tensor<double>::scalar(3.0));
  tape.backward(square(x));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 6.0);
}

TEST(Backward, NonScalarThrows) {
  Tape<double> tape;
  const auto x = tape.input(Tensor<double>(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
}

TEST(Backward, StopGradientBlocks) {
  Tape<double> tape;
  const auto x = tape.input(Tensor<double>::scalar(2.0));
  const auto y = tape.input(Tensor<double>::scalar(5.0));
  const auto sy = stop_gradient(y);
  EXPECT_EQ(sy.value(), y.value());
  tape.backward(mul(sy, x));
  EXPECT_EQ(tape.grad(y)[0], 0.0);
  EXPECT_EQ(tape.grad(x)[0], 5.0);
}

TEST(GradCheck, DenseRandom8x8) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto r = check_input_gradients(
        [](Tape<double>& tp, const std::vector<Var<double>>& v) { return probe(tp, dense(v[0], v[1], v[2])); },
        {randt(rng, {8, 8}), randt(rng, {8, 8}), randt(rng, {8})});
    EXPECT_LT(r.max_rel_error, kTol);
  }
}

TEST(GradCheck, Elementwise) {
  Rng rng(3);
  auto pos = randt(rng, {4, 5});
  for (auto& v : pos.values()) v = 0.5 + std::abs(v);
  const auto a = randt(rng, {4, 5}), b = randt(rng, {4, 5});
  auto check = [&](auto fn, std::vector<Tensor<double>> in) {
    return check_input_gradients(fn, in).max_rel_error;
  };
  using V = std::vector<Var<double>>;
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, add(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, sub(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, mul(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, scale(v[0], -1.7)); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, add_scalar(v[0], 0.3)); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, sqrt(v[0])); }, {pos}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, reciprocal(v[0])); }, {pos}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, leaky_relu(v[0])); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, softmax_rows(v[0])); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, transpose(v[0])); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, reshape(v[0], {2, 10})); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, slice_rows(v[0], 1, 2)); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>&, const V& v) { return mean(square(v[0])); }, {a}), kTol);
  EXPECT_LT(check([](Tape<double>&, const V& v) { return mse(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check([](Tape<double>&, const V& v) { return sum_squared_error(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(check([](Tape<double>& t, const V& v) { return probe(t, scale_by(v[0], v[1])); },
                  {a, Tensor<double>::scalar(0.8)}),
            kTol);
}

TEST(GradCheck, ShapeOps) {
  Rng rng(4);
  using V = std::vector<Var<double>>;
  const auto a = randt(rng, {3, 4}), b = randt(rng, {2, 4}), c = randt(rng, {3, 2});
  EXPECT_LT(check_input_gradients([](Tape<double>& t, const V& v) { return probe(t, concat<double>({v[0], v[1]}, 0)); },
                                  {a, b}).max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients([](Tape<double>& t, const V& v) { return probe(t, concat<double>({v[0], v[1]}, 1)); },
                                  {a, c}).max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients([](Tape<double>& t, const V& v) { return probe(t, upsample_nearest(v[0], 2)); },
                                  {a}).max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients([](Tape<double>& t, const V& v) { return probe(t, add_channel_bias(v[0], v[1])); },
                                  {a, randt(rng, {3})}).max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients([](Tape<double>& t, const V& v) { return probe(t, matmul(v[0], v[1])); },
                                  {a, randt(rng, {4, 5})}).max_rel_error,
            kTol);
}

TEST(GradCheck, Conv1dVariants) {
  Rng rng(5);
  using V = std::vector<Var<double>>;
  for (auto [stride, pad, k] : std::vector<std::array<std::size_t, 3>>{{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 2, 5}}) {
    const auto r = check_input_gradients(
        [=](Tape<double>& t, const V& v) { return probe(t, conv1d(v[0], v[1], v[2], stride, pad)); },
        {randt(rng, {3, 16}), randt(rng, {4, 3, k}), randt(rng, {4})});
    EXPECT_LT(r.max_rel_error, kTol) << stride << " " << pad << " " << k;
  }
}

TEST(GradCheck, Attention) {
  Rng rng(6);
  using V = std::vector<Var<double>>;
  const auto r = check_input_gradients(
      [](Tape<double>& t, const V& v) { return probe(t, attention(v[0], v[1], v[2], 0.5)); },
      {randt(rng, {5, 4}), randt(rng, {6, 4}), randt(rng, {6, 3})});
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(GradCheck, CompositeMlp) {
  Rng rng(7);
  ParamStore<double> store;
  store.add("w1", randt(rng, {6, 10}));
  store.add("b1", randt(rng, {10}));
  store.add("w2", randt(rng, {10, 3}));
  store.add("b2", randt(rng, {3}));
  const auto x = randt(rng, {4, 6});
  const auto y = randt(rng, {4, 3});
  const auto r = check_param_gradients(store, [&](Tape<double>& t) {
    auto h = leaky_relu(dense(t.constant(x), t.param(store.get("w1")), t.param(store.get("b1"))));
    auto o = dense(h, t.param(store.get("w2")), t.param(store.get("b2")));
    return mse(o, t.constant(y));
  });
  EXPECT_LT(r.max_rel_error, kTol);
  EXPECT_EQ(r.checked, store.parameter_count());
}

TEST(AdamW, RejectsNonPositiveLr) {
  ParamStore<double> s;
  s.add("w", Tensor<double>::scalar(1.0));
  EXPECT_THROW(adamw_step(s, {.lr = 0.0}), std::invalid_argument);
}

TEST(AdamW, ZeroGradientNoDecayKeepsParams) {
  ParamStore<float> s;
  s.add("w", Tensor<float>(Shape{3}, 0.25f));
  s.get("w").has_grad = true;
  adamw_step(s, {.lr = 0.1, .weight_decay = 0.0});
  EXPECT_EQ(s.get("w").value, Tensor<float>(Shape{3}, 0.25f));
}

TEST(AdamW, DescentOnSquare) {
  ParamStore<double> s;
  auto& w = s.add("w", Tensor<double>::scalar(1.0));
  Tape<double> tape;
  tape.backward(square(tape.param(w)));
  adamw_step(s, {.lr = 0.1});
  EXPECT_LT(w.value[0], 1.0);
}

TEST(AdamW, ConvergesOnQuadratic) {
  // f(w) = (w0 - 1)^2 + 3 (w1 + 2)^2, minimizer (1, -2).
  ParamStore<double> s;
  auto& w = s.add("w", Tensor<double>(Shape{2}, 0.0));
  const Tensor<double> target(Shape{2}, std::vector<double>{1.0, -2.0});
  const Tensor<double> weight(Shape{2}, std::vector<double>{1.0, 3.0});
  for (int i = 0; i < 200; ++i) {
    s.zero_grad();
    Tape<double> tape;
    const auto d = sub(tape.param(w), tape.constant(target));
    tape.backward(sum(mul(tape.constant(weight), square(d))));
    adamw_step(s, {.lr = 0.1 * std::pow(0.985, i)});
  }
  EXPECT_NEAR(w.value[0], 1.0, 1e-3);
  EXPECT_NEAR(w.value[1], -2.0, 1e-3);
}

TEST(AdamW, SkipsFrozenAndUntouched) {
  ParamStore<float> s;
  auto& a = s.add("a", Tensor<float>(Shape{2}, 1.0f));
  auto& b = s.add("b", Tensor<float>(Shape{2}, 1.0f));
  auto& c = s.add("c", Tensor<float>(Shape{2}, 1.0f));
  b.trainable = false;
  Tape<float> tape;
  auto y = add(tape.param(a), add(tape.param(b), stop_gradient(tape.param(c))));
  tape.backward(sum(y));
  EXPECT_TRUE(a.has_grad);
  EXPECT_FALSE(c.has_grad);
  adamw_step(s, {.lr = 0.01, .weight_decay = 0.1});
  EXPECT_NE(a.value, Tensor<float>(Shape{2}, 1.0f));
  EXPECT_EQ(b.value, Tensor<float>(Shape{2}, 1.0f));
  EXPECT_EQ(c.value, Tensor<float>(Shape{2}, 1.0f));
}

TEST(SteppedLr, FourSteps) {
  EXPECT_DOUBLE_EQ(stepped_lr(1e-4, 2e-5, 4, 0, 100), 1e-4);
  EXPECT_NEAR(stepped_lr(1e-4, 2e-5, 4, 99, 100), 2e-5, 1e-18);
  EXPECT_GT(stepped_lr(1e-4, 2e-5, 4, 30, 100), stepped_lr(1e-4, 2e-5, 4, 60, 100));
}

TEST(WeightsIo, BitExactRoundTrip) {
  Rng rng(8);
  ParamStore<float> s;
  s.add("jscc.encoder.w", randt(rng, {5, 7}).cast<float>());
  s.add("motion.decoder.b", randt(rng, {3}).cast<float>());
  s.get("motion.decoder.b").value[1] = -0.0f;
  const auto dir = std::filesystem::temp_directory_path() / "wvsc_weights_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "w.bin").string();
  save_weights(s, path);
  EXPECT_EQ(std::filesystem::file_size(path), 4u * 38u);
  ParamStore<float> t;
  t.add("jscc.encoder.w", Tensor<float>(Shape{5, 7}));
  t.add("motion.decoder.b", Tensor<float>(Shape{3}));
  EXPECT_EQ(load_weights(t, path), 2u);
  for (const auto& [name, p] : s) {
    const auto& q = t.get(name);
    ASSERT_EQ(p.value.size(), q.value.size());
    EXPECT_EQ(std::memcmp(p.value.data(), q.value.data(), 4 * p.value.size()), 0) << name;
  }
  ParamStore<float> wrong;
  wrong.add("jscc.encoder.w", Tensor<float>(Shape{7, 5}));
  wrong.add("motion.decoder.b", Tensor<float>(Shape{3}));
  EXPECT_THROW(load_weights(wrong, path), WeightsFormatError);
  std::filesystem::resize_file(path, 10);
  EXPECT_THROW(load_weights(t, path), WeightsFormatError);
  EXPECT_THROW(load_weights(t, (dir / "missing.bin").string()), WeightsFormatError);
}
