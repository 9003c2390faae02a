#include <gtest/gtest.h>

#include <cstring>

#include "wvsc/evaluate.hpp"
#include "wvsc/pipeline.hpp"
#include "wvsc/training.hpp"

using namespace wvsc;
using namespace wvsc::models;

namespace {

ModelConfig small_config(int width = 16, int height = 16, int code_length = 32, int keep = 4) {
  ModelConfig c;
  c.codec = {width, height, code_length, keep};
  c.unet.c0 = 4;
  c.unet.c1 = 8;
  c.unet.time_dim = 8;
  c.mfa.token = 4;
  c.mfa.embed = 4;
  c.motion.channels = 4;
  return c.sync();
}

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  return s;
}

std::vector<VideoClip> clips(int n, int w, int h, int frames, std::uint64_t seed = 3) {
  return synthetic_clips(n, w, h, frames, seed);
}

std::vector<std::span<const std::uint8_t>> frames_of(const VideoClip& c, int count) {
  std::vector<std::span<const std::uint8_t>> out;
  for (int i = 0; i < count; ++i) out.push_back(c.frame(i));
  return out;
}

}  // namespace

TEST(TransmitGop, NoiselessOracleLosslessCodecIsExact) {
  // K = 64 and L = D make the codec lossless; pixels survive bit-exactly.
  ModelBundle<float> m(small_config(16, 16, 768, 64));
  const auto clip = clips(1, 16, 16, 4)[0];
  GopOptions opt;
  opt.oracle = true;
  const auto chan = draw_gop_channel(768, std::numeric_limits<double>::infinity(), 1);
  const auto b = transmit_gop(m, frames_of(clip, 4), chan, schedule(), opt, 9);
  ASSERT_EQ(b.decoded.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.decoded[i], b.frames[i]) << "frame " << i;
}

TEST(TransmitGop, OracleCompensationRecoversDiffusionTarget) {
  ModelBundle<double> m(small_config());
  const auto clip = clips(1, 16, 16, 5)[0];
  GopOptions opt;
  opt.oracle = true;
  const auto chan = draw_gop_channel(32, 6.0, 4);
  const auto b = transmit_gop(m, frames_of(clip, 5), chan, schedule(), opt, 2);
  for (std::size_t i = 1; i < 5; ++i) {
    const auto target = hadamard(chan->hs(), compose_p_frame(b.reference_normalized, b.residuals_normalized[i], 0.7));
    EXPECT_LT(relative_error(b.compensated[i], target), 1e-5) << "frame " << i;
  }
}

TEST(TransmitGop, SingleFrameGopSkipsCompensation) {
  ModelBundle<float> m(small_config());
  const auto clip = clips(1, 16, 16, 1)[0];
  GopOptions opt;
  opt.comp.record_trace = true;
  const auto b = transmit_gop(m, frames_of(clip, 1), draw_gop_channel(32, 10.0, 1), schedule(), opt, 0);
  EXPECT_EQ(b.decoded.size(), 1u);
  for (const auto& f : b.compensated) EXPECT_TRUE(f.empty());
  for (const auto& t : b.traces) EXPECT_TRUE(t.steps.empty());
  EXPECT_EQ(b.channel_uses, 16u);
}

TEST(TransmitGop, TenFrameGopRunsNinePFrameChains) {
  ModelBundle<float> m(small_config());
  const auto clip = clips(1, 16, 16, 10)[0];
  GopOptions opt;
  opt.comp.record_trace = true;
  const auto chan = draw_gop_channel(32, 12.0, 1);
  const auto b = transmit_gop(m, frames_of(clip, 10), chan, schedule(), opt, 5);
  std::size_t chains = 0;
  for (const auto& t : b.traces) {
    if (!t.steps.empty()) {
      ++chains;
      EXPECT_EQ(t.steps.size(), 10u);
    }
  }
  EXPECT_EQ(chains, 9u);
  EXPECT_TRUE(b.traces[0].steps.empty());
  EXPECT_EQ(b.decoded.size(), 10u);
}

TEST(TransmitGop, AdditiveReconstructionIsExact) {
  ModelBundle<float> m(small_config());
  for (auto& [name, p] : m.params) {  // non-trivial motion decoder output
    if (name.find(".head.") != std::string::npos) p.value.fill(0.05f);
  }
  const auto clip = clips(1, 16, 16, 6, 8)[0];
  const auto b = transmit_gop(m, frames_of(clip, 6), draw_gop_channel(32, 3.0, 2), schedule(), GopOptions{}, 1);
  for (std::size_t i = 1; i < 6; ++i) {
    for (std::size_t j = 0; j < 32; ++j) {
      EXPECT_EQ(b.reconstructed[i][j] - b.predicted[i][j], b.residuals_received[i][j]);
    }
    EXPECT_GT(squared_norm(b.predicted[i]), 0.0);
  }
}

TEST(TransmitGop, ChannelUseAccountingAndSharedFading) {
  ModelBundle<float> m(small_config(16, 8, 24, 4));
  const auto clip = clips(1, 16, 8, 7)[0];
  const auto chan = draw_gop_channel(24, 10.0, 3);
  const auto b = transmit_gop(m, frames_of(clip, 7), chan, schedule(), GopOptions{}, 1);
  EXPECT_EQ(b.channel_uses, 12u + 6u * 12u);
  EXPECT_EQ(b.channel.get(), chan.get());
  const double cbr = channel_bandwidth_ratio(24, 16, 8);
  EXPECT_NEAR(cbr, (static_cast<double>(b.channel_uses) / 7.0) / (16.0 * 8.0 * 3.0), 1e-9);
}

TEST(TransmitGop, ErrorsNameTheStage) {
  ModelBundle<float> m(small_config());
  const auto wrong = clips(1, 24, 16, 2)[0];
  try {
    transmit_gop(m, frames_of(wrong, 2), draw_gop_channel(32, 5.0, 1), schedule(), GopOptions{}, 1);
    FAIL() << "expected PipelineError";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "semantic_encode");
  }
  const auto ok = clips(1, 16, 16, 2)[0];
  try {
    transmit_gop(m, frames_of(ok, 2), draw_gop_channel(40, 5.0, 1), schedule(), GopOptions{}, 1);
    FAIL() << "expected PipelineError";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "semantic_encode");
  }
  GopOptions bad;
  bad.comp.lambda = 1.5;
  try {
    transmit_gop(m, frames_of(ok, 2), draw_gop_channel(32, 5.0, 1), schedule(), bad, 1);
    FAIL() << "expected PipelineError";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "ddmfc");
  }
}

TEST(TransmitGop, DeterministicGivenSeed) {
  ModelBundle<float> m(small_config());
  const auto clip = clips(1, 16, 16, 4)[0];
  const auto a = transmit_gop(m, frames_of(clip, 4), draw_gop_channel(32, 5.0, 7), schedule(), GopOptions{}, 11);
  const auto b = transmit_gop(m, frames_of(clip, 4), draw_gop_channel(32, 5.0, 7), schedule(), GopOptions{}, 11);
  EXPECT_EQ(a.reconstructed, b.reconstructed);
  EXPECT_EQ(a.decoded, b.decoded);
}

TEST(PreviousWindow, FallsBackToReferenceAndKeepsNewest) {
  const SemanticFrame ref{9.0};
  EXPECT_EQ(previous_window({}, ref, 3), FrameList{ref});
  const FrameList h{{1.0}, {2.0}, {3.0}, {4.0}};
  EXPECT_EQ(previous_window(h, ref, 3), (FrameList{{2.0}, {3.0}, {4.0}}));
  EXPECT_EQ(previous_window(FrameList(h.begin(), h.begin() + 2), ref, 3), (FrameList{{1.0}, {2.0}}));
}

TEST(LossReconstruction, Basics) {
  const SemanticFrame x{0.2, 0.4, 0.6}, y{0.3, 0.5, 0.7};
  EXPECT_EQ(loss_reconstruction({{{x, x}}}), 0.0);
  EXPECT_NEAR(loss_reconstruction({{{x, y}}}), 0.01, 1e-15);
  EXPECT_THROW(loss_reconstruction(std::vector<std::vector<std::pair<FrameView, FrameView>>>{}),
               std::invalid_argument);
}

TEST(LossReconstruction, MatchesTwoLoopReference) {
  Rng rng(4);
  std::vector<std::vector<SemanticFrame>> xs(3), ys(3);
  std::vector<std::vector<std::pair<FrameView, FrameView>>> batch(3);
  for (int g = 0; g < 3; ++g) {
    const int frames = 2 + g;
    for (int i = 0; i < frames; ++i) {
      SemanticFrame x(50), y(50);
      for (auto& v : x) v = rng.uniform();
      for (auto& v : y) v = rng.uniform();
      xs[g].push_back(x);
      ys[g].push_back(y);
    }
    for (int i = 0; i < frames; ++i) batch[g].emplace_back(xs[g][i], ys[g][i]);
  }
  double total = 0.0;
  int count = 0;
  for (int g = 0; g < 3; ++g) {
    for (std::size_t i = 0; i < xs[g].size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 50; ++j) s += (xs[g][i][j] - ys[g][i][j]) * (xs[g][i][j] - ys[g][i][j]);
      total += s / 50.0;
      ++count;
    }
  }
  EXPECT_NEAR(loss_reconstruction(batch), total / count, 1e-12);
}

TEST(LossReconstruction, DecodedBundles) {
  GopBundle b;
  b.frames = {Pixels(10, 100)};
  b.decoded = {Pixels(10, 100)};
  EXPECT_EQ(loss_reconstruction(std::vector<GopBundle>{b}), 0.0);
  b.decoded = {};
  EXPECT_THROW(loss_reconstruction(std::vector<GopBundle>{b}), std::invalid_argument);
}

namespace {

DiffusionGop diffusion_gop(const ModelBundle<double>& m, int frames) {
  const auto clip = clips(1, 16, 16, frames, 12)[0];
  GopOptions opt;
  opt.semantic_only = true;
  nn::Tape<double> tape;
  const auto g = run_gop(tape, m, frames_of(clip, frames), draw_gop_channel(32, 8.0, 1), schedule(), opt, 3);
  return diffusion_inputs(g.bundle);
}

}  // namespace

TEST(LossDiffusion, PFrameTermsGiveNoBaseGradient) {
  ModelBundle<double> m(small_config());
  const auto gop = diffusion_gop(m, 4);
  const auto chan = draw_gop_channel(32, 8.0, 2);
  Rng rng(1);
  m.params.zero_grad();
  nn::Tape<double> tape;
  auto loss = loss_diffusion(tape, m, gop, *chan, schedule(), 0.7, rng, nullptr, false);
  tape.backward(loss);
  bool residual_reached = false;
  for (const auto& [name, p] : m.params) {
    if (name.starts_with(kBasePredictor)) {
      for (double v : p.grad.values()) ASSERT_EQ(v, 0.0) << name;
    }
    if (name.starts_with(kResidualPredictor) && p.has_grad) residual_reached = true;
  }
  EXPECT_TRUE(residual_reached);
}

TEST(LossDiffusion, LambdaOneIgnoresResidualPredictor) {
  ModelBundle<double> m(small_config());
  const auto gop = diffusion_gop(m, 3);
  const auto chan = draw_gop_channel(32, 8.0, 2);
  auto eval = [&] {
    Rng rng(5);
    nn::Tape<double> tape;
    return loss_diffusion(tape, m, gop, *chan, schedule(), 1.0, rng).value()[0];
  };
  const double before = eval();
  for (auto& [name, p] : m.params) {
    if (name.starts_with(kResidualPredictor)) p.value.fill(0.37);
  }
  EXPECT_EQ(eval(), before);
}

TEST(LossDiffusion, ReportsComponents) {
  ModelBundle<double> m(small_config());
  const auto gop = diffusion_gop(m, 3);
  Rng rng(6);
  nn::Tape<double> tape;
  DiffusionLossInfo info;
  const auto loss = loss_diffusion(tape, m, gop, *draw_gop_channel(32, 8.0, 2), schedule(), 0.7, rng, &info);
  EXPECT_GE(info.t, 1);
  EXPECT_LE(info.t, 1000);
  EXPECT_NEAR(loss.value()[0], (info.reference_term + 2.0 * info.p_frame_term) / 3.0, 1e-12);
}

namespace {

std::map<std::string, nn::Tensor<float>> snapshot(const ModelBundle<float>& m) {
  std::map<std::string, nn::Tensor<float>> out;
  for (const auto& [name, p] : m.params) out.emplace(name, p.value);
  return out;
}

TrainConfig quick(int stage, int steps) {
  TrainConfig c;
  c.stage = stage;
  c.steps = steps;
  c.gop_size = 3;
  c.m = 3;
  return c;
}

}  // namespace

TEST(TrainStage, PrerequisitesEnforced) {
  ModelBundle<float> m(small_config());
  const auto data = clips(2, 16, 16, 4);
  EXPECT_THROW(train_stage(m, data, quick(2, 1), schedule(), {}), std::invalid_argument);
  EXPECT_THROW(train_stage(m, data, quick(3, 1), schedule(), {1}), std::invalid_argument);
  EXPECT_THROW(train_stage(m, data, quick(4, 1), schedule(), {1, 2}), std::invalid_argument);
  EXPECT_THROW(train_stage(m, clips(1, 16, 16, 2), quick(1, 1), schedule(), {}), std::invalid_argument);
}

TEST(TrainStage, FreezingByStage) {
  ModelBundle<float> m(small_config());
  const auto data = clips(3, 16, 16, 5);
  const auto s0 = snapshot(m);
  train_stage(m, data, quick(1, 3), schedule(), {});
  const auto s1 = snapshot(m);
  for (const char* g : {kJsccEncoder, kMotionDecoder, kBasePredictor, kResidualPredictor}) {
    bool changed = false;
    for (const auto& [name, v] : s1) changed |= name.starts_with(g) && !(v == s0.at(name));
    EXPECT_TRUE(changed) << g;
  }
  train_stage(m, data, quick(2, 3), schedule(), {1});
  const auto s2 = snapshot(m);
  for (const auto& [name, v] : s2) {
    const bool diffusion = name.starts_with(kBasePredictor) || name.starts_with(kResidualPredictor);
    if (!diffusion) {
      EXPECT_TRUE(v == s1.at(name)) << name;
    }
  }
  train_stage(m, data, quick(3, 3), schedule(), {1, 2});
  const auto s3 = snapshot(m);
  for (const auto& [name, v] : s3) {
    if (name.starts_with(kJsccDecoder)) {
      EXPECT_FALSE(v == s2.at(name)) << name;
    } else {
      EXPECT_TRUE(v == s2.at(name)) << name;
    }
  }
}

TEST(TrainStage, StageOneLossDecreases) {
  ModelBundle<float> m(small_config());
  const auto data = clips(4, 16, 16, 6);
  auto cfg = quick(1, 120);
  cfg.m = 2;
  const auto res = train_stage(m, data, cfg, schedule(), {});
  ASSERT_EQ(res.loss.size(), 120u);
  const auto [head, tail] = head_tail_means(res.reconstruction, 20);
  EXPECT_LT(tail, head);
}

TEST(Evaluate, DeterministicAndNoiselessDominates) {
  ModelBundle<float> m(small_config());
  const auto data = clips(2, 16, 16, 4, 21);
  SimulateOptions opt;
  opt.gop_size = 4;
  opt.comp.start_step = 3;
  const double inf = std::numeric_limits<double>::infinity();
  const auto a = evaluate(m, data, schedule(), {inf, 0.0, 10.0}, {1, 2}, opt);
  const auto b = evaluate(m, data, schedule(), {inf, 0.0, 10.0}, {1, 2}, opt);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mean_psnr_db, b[i].mean_psnr_db);
    EXPECT_EQ(a[i].mean_ms_ssim, b[i].mean_ms_ssim);
  }
  for (std::size_t i = 2; i < a.size(); ++i) {
    EXPECT_GT(a[0].mean_psnr_db, a[i].mean_psnr_db);
    EXPECT_GT(a[1].mean_psnr_db, a[i].mean_psnr_db);
  }
}

TEST(Evaluate, JobCountDoesNotChangeResults) {
  ModelBundle<float> m(small_config());
  const auto data = clips(3, 16, 16, 6, 22);
  SimulateOptions opt;
  opt.gop_size = 3;
  opt.comp.start_step = 2;
  opt.snr_db = 4.0;
  opt.seed = 8;
  const auto serial = simulate(m, data, schedule(), opt);
  opt.jobs = 3;
  const auto threaded = simulate(m, data, schedule(), opt);
  ASSERT_EQ(serial.size(), threaded.size());
  ASSERT_EQ(serial.size(), 18u);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].psnr_db, threaded[i].psnr_db);
    EXPECT_EQ(serial[i].gop, threaded[i].gop);
    EXPECT_EQ(serial[i].frame, threaded[i].frame);
  }
  EXPECT_EQ(serial[0].role, 'I');
  EXPECT_EQ(serial[1].role, 'P');
}
