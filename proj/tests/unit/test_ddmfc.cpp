#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "wvsc/ddmfc.hpp"
#include "wvsc/oracle.hpp"

using namespace wvsc;

namespace {

SemanticFrame randn(Rng& rng, std::size_t n) {
  SemanticFrame v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

const NoiseSchedule& sched() {
  static const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  return s;
}

class CountingPredictor final : public NoisePredictor {
 public:
  explicit CountingPredictor(const NoisePredictor& inner) : inner_(inner) {}
  SemanticFrame predict(FrameView z, int t, const FrameList& c) const override {
    ++calls;
    return inner_.predict(z, t, c);
  }
  mutable int calls = 0;

 private:
  const NoisePredictor& inner_;
};

// Received inputs consistent with a chain at step m whose noise is exactly
// sqrt(lambda) eps_b + sqrt(1 - lambda) eps_r (sigma2 matched to abar_m).
struct OracleCase {
  SemanticFrame z_ref, z_res, eps_b, eps_r, f_ref_rx, r_rx, target;
  double sigma2;
};

OracleCase make_case(Rng& rng, std::size_t len, int m, double lambda) {
  OracleCase c;
  c.z_ref = randn(rng, len);
  c.z_res = randn(rng, len);
  c.eps_b = randn(rng, len);
  c.eps_r = randn(rng, len);
  c.sigma2 = 1.0 / sched().abar(m) - 1.0;
  c.target = compose_p_frame(c.z_ref, c.z_res, lambda);
  return c;
}

}  // namespace

TEST(Compose, Examples) {
  const SemanticFrame f{1, 1}, r{0, 2};
  EXPECT_EQ(compose_p_frame(f, r, 1.0), f);
  EXPECT_EQ(compose_p_frame(f, r, 0.0), r);
  const auto p = compose_p_frame(f, r, 0.7);
  EXPECT_NEAR(p[0], 0.83666, 1e-5);
  EXPECT_NEAR(p[1], 1.93211, 1e-5);
  EXPECT_THROW(compose_p_frame(f, r, 1.5), std::invalid_argument);
  EXPECT_THROW(compose_p_frame(f, SemanticFrame{1}, 0.5), std::invalid_argument);
}

TEST(StartPoint, Examples) {
  const SemanticFrame f{1, -2, 0.5, 3}, r{0.1, 0.2, -0.3, 0.4};
  EXPECT_EQ(start_point(f, r, 0.7, 0.0), compose_p_frame(f, r, 0.7));
  const auto a = start_point(f, r, 0.7, 0.25);
  const auto b = compose_p_frame(f, r, 0.7);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a[j], 0.894427 * b[j], 1e-6);
  EXPECT_THROW(start_point(f, r, 0.7, -0.1), std::invalid_argument);
}

TEST(StartPoint, NoiselessChannelGivesCleanComposition) {
  Rng rng(1);
  const auto chan = make_realization(ComplexVector(8, {0.6, 0.8}), 0.0);
  const auto f = randn(rng, 16), r = randn(rng, 16);
  const auto sp = start_point(transmit_equalized(f, chan, rng), transmit_equalized(r, chan, rng), 0.7, 0.0);
  EXPECT_LT(relative_error(sp, compose_p_frame(f, r, 0.7)), 1e-15);
}

TEST(CombineNoise, Examples) {
  EXPECT_EQ(combine_noise(SemanticFrame{1, 2}, SemanticFrame{5, 6}, 1.0), (SemanticFrame{1, 2}));
  const auto c = combine_noise(SemanticFrame{1, 0}, SemanticFrame{0, 1}, 0.7);
  EXPECT_NEAR(c[0], std::sqrt(0.7), 1e-15);
  EXPECT_NEAR(c[1], std::sqrt(0.3), 1e-15);
  const SemanticFrame e{3, 0, 0}, p{0, 4, 1};
  const auto d = combine_noise(e, p, 0.4);
  EXPECT_NEAR(squared_norm(d), 0.4 * squared_norm(e) + 0.6 * squared_norm(p), 1e-12);
}

TEST(RemoveBaseNoise, Examples) {
  Rng rng(2);
  const auto chan = make_realization(sample_rayleigh(rng, 8), 0.1);
  const auto z = randn(rng, 16), e = randn(rng, 16);
  EXPECT_EQ(remove_base_noise(z, e, 0.0, 5, sched(), chan), z);
  EXPECT_EQ(remove_base_noise(z, SemanticFrame(16, 0.0), 0.6, 5, sched(), chan), z);
}

TEST(RemoveBaseNoise, LeavesResidualBranch) {
  Rng rng(3);
  const auto chan = make_realization(sample_rayleigh(rng, 32), 0.2);
  for (int trial = 0; trial < 50; ++trial) {
    const double lambda = rng.uniform();
    const int t = 1 + static_cast<int>(rng.uniform_int(0, 999));
    const auto zs = randn(rng, 64), eb = randn(rng, 64), er = randn(rng, 64);
    const auto zt = forward_sample(zs, t, combine_noise(eb, er, lambda), chan, sched());
    const auto zp = remove_base_noise(zt, eb, lambda, t, sched(), chan);
    SemanticFrame expected(64);
    const double a = std::sqrt(sched().abar(t)), b = std::sqrt(1 - sched().abar(t)) * std::sqrt(1 - lambda);
    for (std::size_t j = 0; j < 64; ++j) expected[j] = a * zs[j] + b * chan.hn()[j] * er[j];
    EXPECT_LT(relative_error(zp, expected), 1e-12);
  }
}

// forward(compose(f, r), t, combine(e, p)) splits into the two weighted branches.
TEST(Decomposition, ForwardIsLinearInBranches) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto chan = make_realization(sample_rayleigh(rng, 32), rng.uniform());
    const double lambda = rng.uniform();
    const int t = static_cast<int>(rng.uniform_int(0, 1000));
    const auto f = randn(rng, 64), r = randn(rng, 64), e = randn(rng, 64), p = randn(rng, 64);
    const auto lhs = forward_sample(compose_p_frame(f, r, lambda), t, combine_noise(e, p, lambda), chan, sched());
    const auto rhs = axpby(std::sqrt(lambda), forward_sample(f, t, e, chan, sched()), std::sqrt(1 - lambda),
                           forward_sample(r, t, p, chan, sched()));
    ASSERT_LT(relative_error(lhs, rhs), 1e-12);
  }
}

TEST(ReverseStepP, CollapsesToReferenceAtLambdaOne) {
  Rng rng(5);
  const auto chan = make_realization(sample_rayleigh(rng, 16), 0.1);
  const auto z = randn(rng, 32), eps = randn(rng, 32), junk = randn(rng, 32);
  InjectedNoiseOracle base(eps), residual(junk);
  CompensationParams params;
  params.lambda = 1.0;
  params.steering = constant_steering(0.0);
  const auto zp = remove_base_noise(z, eps, 1.0, 9, sched(), chan);
  const auto a = reverse_step_p(z, zp, eps, residual, FrameList{junk}, params, sched(), chan, 9, rng);
  const auto b = reverse_step_reference(z, 9, base, chan, sched(), 0.0, rng);
  EXPECT_EQ(a, b);
  EXPECT_THROW(reverse_step_p(z, zp, eps, residual, {}, params, sched(), chan, 1, rng), std::invalid_argument);
}

TEST(ReverseStepP, SteeringShiftsEachStepByItsTerm) {
  Rng rng(6);
  const auto chan = make_realization(sample_rayleigh(rng, 16), 0.1);
  const auto z = randn(rng, 32), eps = randn(rng, 32), phi = randn(rng, 32), prev = randn(rng, 32);
  InjectedNoiseOracle residual(phi);
  CompensationParams off, on;
  off.steering = constant_steering(0.0);
  on.steering = constant_steering(0.3);
  const auto zp = remove_base_noise(z, eps, 0.7, 10, sched(), chan);
  const auto a = reverse_step_p(z, zp, eps, residual, FrameList{prev}, off, sched(), chan, 10, rng);
  const auto b = reverse_step_p(z, zp, eps, residual, FrameList{prev}, on, sched(), chan, 10, rng);
  const auto s = steering_term(z, FrameList{prev}, on.steering, 10);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(a[j] - b[j], s[j], 1e-14);
}

TEST(FinalStep, Examples) {
  Rng rng(7);
  const auto chan = make_realization(sample_rayleigh(rng, 16), 0.1);
  const auto z1 = randn(rng, 32);
  ZeroPredictor zero;
  CompensationParams params;
  const auto out = final_step(z1, z1, SemanticFrame(32, 0.0), zero, {}, params, sched(), chan);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(out[j], z1[j] / std::sqrt(sched().abar(1)), 1e-15);

  // abar_1 -> 1: the step is the identity.
  const auto near_one = build_schedule(1, 1e-300, 1e-300);
  const auto same = final_step(z1, z1, randn(rng, 32), zero, {}, params, near_one, chan);
  EXPECT_LT(relative_error(same, z1), 1e-15);

  const auto zs = randn(rng, 32), eb = randn(rng, 32), er = randn(rng, 32);
  const auto zt = forward_sample(zs, 1, combine_noise(eb, er, 0.7), chan, sched());
  InjectedNoiseOracle residual(er);
  const auto rec = final_step(zt, remove_base_noise(zt, eb, 0.7, 1, sched(), chan), eb, residual, {}, params,
                              sched(), chan);
  EXPECT_LT(relative_error(rec, zs), 1e-12);
}

TEST(DdmfcSample, ZeroStepsReturnsStartPoint) {
  Rng rng(8);
  const auto chan = make_realization(sample_rayleigh(rng, 16), 0.0);
  const auto f = randn(rng, 32), r = randn(rng, 32);
  ZeroPredictor zero;
  CountingPredictor base(zero);
  CompensationParams params;
  params.start_step = 0;
  params.record_trace = true;
  const auto [out, trace] = ddmfc_sample(f, r, {}, base, zero, params, sched(), chan, rng);
  EXPECT_EQ(out, start_point(f, r, params.lambda, 0.0));
  EXPECT_TRUE(trace.steps.empty());
  EXPECT_EQ(base.calls, 0);
}

// Noise-matched received inputs with exact injected noise recover the target.
TEST(DdmfcSample, OracleRoundTrip) {
  Rng rng(9);
  for (int m : {1, 5, 10}) {
    for (double lambda : {0.0, 0.7, 1.0}) {
      const double sigma2 = 1.0 / sched().abar(m) - 1.0;
      const auto chan = make_realization(sample_rayleigh(rng, 32), sigma2);
      auto c = make_case(rng, 64, m, lambda);
      const double sd = std::sqrt(sigma2);
      SemanticFrame f_rx(64), r_rx(64);
      for (std::size_t j = 0; j < 64; ++j) {
        f_rx[j] = c.z_ref[j] + sd * chan.hn()[j] * c.eps_b[j];
        r_rx[j] = c.z_res[j] + sd * chan.hn()[j] * c.eps_r[j];
      }
      InjectedNoiseOracle base(c.eps_b), residual(c.eps_r);
      CompensationParams params;
      params.lambda = lambda;
      params.start_step = m;
      params.steering = constant_steering(0.0);
      params.record_trace = true;
      const auto [out, trace] = ddmfc_sample(f_rx, r_rx, FrameList{c.z_ref}, base, residual, params, sched(), chan, rng);
      EXPECT_LT(relative_error(out, c.target), 1e-5) << "m=" << m << " lambda=" << lambda;
      EXPECT_EQ(trace.steps.size(), static_cast<std::size_t>(m));
    }
  }
}

// With a clean-target oracle the chain returns the target from any start point
// when lambda < 1.
TEST(DdmfcSample, CleanTargetOracleRecoversTarget) {
  Rng rng(10);
  const auto chan = make_realization(sample_rayleigh(rng, 32), 0.03);
  const auto target = randn(rng, 64);
  CleanTargetOracle base(randn(rng, 64), chan, sched());
  const auto residual = residual_oracle(target, 0.7, chan, sched());
  CompensationParams params;
  params.steering = constant_steering(0.0);
  const auto [out, trace] =
      ddmfc_sample(randn(rng, 64), randn(rng, 64), {}, base, residual, params, sched(), chan, rng);
  EXPECT_LT(relative_error(out, target), 1e-9);
}

TEST(DdmfcSample, BasePredictorRunsMTimesPerGop) {
  Rng rng(11);
  const auto chan = make_realization(sample_rayleigh(rng, 16), 0.05);
  ZeroPredictor zero;
  CountingPredictor base(zero), residual(zero);
  CompensationParams params;
  const auto f_ref = randn(rng, 32);
  const auto table = run_base_chain(f_ref, base, params.start_step, 0.0, sched(), chan, rng);
  FrameList previous{f_ref};
  for (int i = 0; i < 9; ++i) {
    auto [out, tr] = ddmfc_sample_p(f_ref, randn(rng, 32), previous, table, residual, params, sched(), chan, rng);
    previous.push_back(out);
  }
  EXPECT_EQ(base.calls, params.start_step);
  EXPECT_EQ(residual.calls, 9 * params.start_step);
}

TEST(DdmfcSample, DefaultsRecordTenSteps) {
  Rng rng(12);
  const auto chan = make_realization(sample_rayleigh(rng, 16), snr_to_sigma2(12));
  ZeroPredictor zero;
  CompensationParams params;
  params.record_trace = true;
  EXPECT_EQ(params.start_step, 10);
  EXPECT_DOUBLE_EQ(params.lambda, 0.7);
  EXPECT_DOUBLE_EQ(params.steering.k_of_t(5), 0.3);
  const auto f = randn(rng, 32);
  const auto [out, trace] = ddmfc_sample(f, randn(rng, 32), FrameList{f}, zero, zero, params, sched(), chan, rng);
  EXPECT_EQ(trace.steps.size(), 10u);
  EXPECT_EQ(trace.steps.front().t, 10);
  EXPECT_EQ(trace.steps.back().t, 1);
  EXPECT_EQ(out.size(), 32u);
}

TEST(DdmfcSample, DeterministicAndContinuousInLambda) {
  Rng r0(13);
  const auto chan = make_realization(sample_rayleigh(r0, 16), 0.1);
  const auto f = randn(r0, 32), r = randn(r0, 32), eb = randn(r0, 32), er = randn(r0, 32);
  InjectedNoiseOracle base(eb), residual(er);
  auto run = [&](double lambda) {
    Rng rng(99);
    CompensationParams p;
    p.lambda = lambda;
    return ddmfc_sample(f, r, FrameList{f}, base, residual, p, sched(), chan, rng).first;
  };
  EXPECT_EQ(run(0.7), run(0.7));
  // Finite-difference sweep away from the sqrt endpoints.
  std::vector<double> steps;
  const double h = 0.01;
  SemanticFrame prev = run(0.05);
  for (double lam = 0.05 + h; lam <= 0.95 + 1e-9; lam += h) {
    const auto cur = run(lam);
    steps.push_back(std::sqrt(squared_distance(cur, prev)));
    prev = cur;
  }
  for (std::size_t i = 1; i < steps.size(); ++i) {
    EXPECT_LT(steps[i], 10.0 * steps[i - 1] + 1e-12);
    EXPECT_LT(steps[i - 1], 10.0 * steps[i] + 1e-12);
  }
}

TEST(DdmfcSample, RejectsMismatchedTable) {
  Rng rng(14);
  const auto chan = make_realization(sample_rayleigh(rng, 16), 0.1);
  ZeroPredictor zero;
  const auto f = randn(rng, 32);
  const auto table = run_base_chain(f, zero, 5, 0.0, sched(), chan, rng);
  CompensationParams params;
  EXPECT_THROW(ddmfc_sample_p(f, f, {}, table, zero, params, sched(), chan, rng), std::invalid_argument);
  params.lambda = -0.1;
  EXPECT_THROW(ddmfc_sample(f, f, {}, zero, zero, params, sched(), chan, rng), std::invalid_argument);
}
