#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wvsc/data.hpp"
#include "wvsc/nn/optim.hpp"
#include "wvsc/pipeline.hpp"

namespace wvsc {

struct TrainConfig {
  int stage = 1;
  double mu = 1e-4;  ///< weight of the diffusion term in stage 1
  int gop_size = 5;
  int steps = 300;
  double lr_start = 1e-3;
  double lr_end = 2e-4;
  int lr_steps = 4;
  double weight_decay = 0.0;
  double snr_min_db = 0.0;
  double snr_max_db = 18.0;
  double lambda = 0.7;
  double k = 0.3;
  int m = 10;
  std::uint64_t seed = 1;
};

struct TrainResult {
  std::vector<double> loss;            ///< stage objective per step
  std::vector<double> reconstruction;  ///< L_R per step (stages 1 and 3)
  std::vector<double> diffusion;       ///< L_D per step (stages 1 and 2)
};

/// Parameter groups each stage updates.
inline std::vector<std::string> stage_trainable_groups(int stage) {
  using namespace models;
  switch (stage) {
    case 1:
      return {kJsccEncoder, kJsccDecoder, kMotionEncoder, kMotionDecoder, kBasePredictor, kResidualPredictor};
    case 2:
      return {kBasePredictor, kResidualPredictor};
    case 3:
      return {kJsccDecoder};
    default:
      throw std::invalid_argument("stage must be 1, 2 or 3 (got " + std::to_string(stage) + ")");
  }
}

/// Stages that must have completed before `stage` can run.
inline std::vector<int> stage_prerequisites(int stage) {
  switch (stage) {
    case 1:
      return {};
    case 2:
      return {1};
    case 3:
      return {1, 2};
    default:
      throw std::invalid_argument("stage must be 1, 2 or 3 (got " + std::to_string(stage) + ")");
  }
}

/// A GoP drawn from a clip: `count` consecutive frames starting at `first`.
struct GopRef {
  std::size_t clip = 0;
  int first = 0;
  int count = 0;
};

inline std::vector<std::span<const std::uint8_t>> gop_frames(const std::vector<VideoClip>& clips, const GopRef& g) {
  std::vector<std::span<const std::uint8_t>> out;
  for (int i = 0; i < g.count; ++i) out.push_back(clips.at(g.clip).frame(g.first + i));
  return out;
}

/// Consecutive non-overlapping GoPs; a clip's last GoP may be shorter.
inline std::vector<GopRef> split_gops(const std::vector<VideoClip>& clips, int gop_size) {
  if (gop_size < 1) throw std::invalid_argument("GoP size must be >= 1");
  std::vector<GopRef> out;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    for (int s = 0; s < clips[c].frame_count; s += gop_size) {
      out.push_back({c, s, std::min(gop_size, clips[c].frame_count - s)});
    }
  }
  return out;
}

/// Random synthetic training clips with mixed objects, backgrounds and motion.
inline std::vector<VideoClip> synthetic_clips(int count, int width, int height, int frames, std::uint64_t seed) {
  std::vector<VideoClip> clips;
  Rng rng(mix_seed(seed));
  const int vmax = std::max(1, std::min(3, std::min(width, height) / 8));
  for (int i = 0; i < count; ++i) {
    MotionSpec spec;
    spec.object = static_cast<ObjectKind>(rng.uniform_int(0, 2));
    spec.background = static_cast<BackgroundKind>(rng.uniform_int(0, 2));
    spec.dx = static_cast<int>(rng.uniform_int(-vmax, vmax));
    spec.dy = static_cast<int>(rng.uniform_int(-vmax, vmax));
    spec.seed = rng.next_u64();
    clips.push_back(generate_clip(spec, width, height, frames));
  }
  return clips;
}

inline void require_clips(const std::vector<VideoClip>& clips, int width, int height, int min_frames) {
  if (clips.empty()) throw std::invalid_argument("no video clips supplied");
  for (const auto& c : clips) {
    if (c.width != width || c.height != height) {
      throw std::invalid_argument("clip is " + std::to_string(c.width) + "x" + std::to_string(c.height) +
                                  " but the model expects " + std::to_string(width) + "x" + std::to_string(height));
    }
    if (c.frame_count < min_frames) {
      throw std::invalid_argument("clip has " + std::to_string(c.frame_count) + " frames, GoP needs " +
                                  std::to_string(min_frames));
    }
  }
}

using StepCallback = std::function<void(int step, double loss)>;

/// One training stage. Parameters outside the stage's groups are masked from
/// the optimizer. `completed` lists stages already run on these weights.
template <typename T>
TrainResult train_stage(models::ModelBundle<T>& m, const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                        const NoiseSchedule& sched, const std::set<int>& completed,
                        const StepCallback& on_step = {}) {
  for (int s : stage_prerequisites(cfg.stage)) {
    if (!completed.contains(s)) {
      throw std::invalid_argument("stage " + std::to_string(cfg.stage) + " needs weights from stage " +
                                  std::to_string(s));
    }
  }
  if (!(cfg.mu >= 0.0)) throw std::invalid_argument("train: mu must be >= 0");
  if (cfg.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (cfg.gop_size < 1) throw std::invalid_argument("train: GoP size must be >= 1");
  const auto& cc = m.config().codec;
  require_clips(clips, cc.width, cc.height, cfg.gop_size);

  m.params.set_all_trainable(false);
  for (const auto& g : stage_trainable_groups(cfg.stage)) m.params.set_trainable(g, true);
  for (auto& [_, p] : m.params) {
    p.first_moment.fill(T{0});
    p.second_moment.fill(T{0});
  }
  m.params.step_count() = 0;

  GopOptions opt;
  opt.comp.lambda = cfg.lambda;
  opt.comp.steering = constant_steering(cfg.k);
  opt.comp.start_step = cfg.m;
  opt.decode = false;
  opt.semantic_only = cfg.stage == 2;

  const bool use_r = cfg.stage != 2;
  const bool use_d = cfg.stage != 3 && (cfg.stage == 2 || cfg.mu > 0.0);
  Rng rng(derive_seed(cfg.seed, 0x7a11, static_cast<std::uint64_t>(cfg.stage)));
  TrainResult res;
  nn::AdamWConfig adam;
  adam.weight_decay = cfg.weight_decay;
  for (int step = 0; step < cfg.steps; ++step) {
    GopRef g;
    g.clip = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(clips.size()) - 1));
    g.first = static_cast<int>(rng.uniform_int(0, clips[g.clip].frame_count - cfg.gop_size));
    g.count = cfg.gop_size;
    const double snr = cfg.snr_min_db + (cfg.snr_max_db - cfg.snr_min_db) * rng.uniform();
    const std::uint64_t gop_seed = rng.next_u64();
    const auto chan = draw_gop_channel(m.code_length(), snr, derive_seed(gop_seed, 0xc4a2));

    m.params.zero_grad();
    nn::Tape<T> tape;
    auto graph = run_gop(tape, m, gop_frames(clips, g), chan, sched, opt, gop_seed);
    nn::Var<T> loss;
    bool has_loss = false;
    double lr_val = 0.0, ld_val = 0.0;
    if (use_r) {
      nn::Var<T> lr = graph.frame_losses[0];
      for (std::size_t i = 1; i < graph.frame_losses.size(); ++i) lr = nn::add(lr, graph.frame_losses[i]);
      lr = nn::scale(lr, 1.0 / static_cast<double>(graph.frame_losses.size()));
      lr_val = static_cast<double>(lr.value()[0]);
      loss = lr;
      has_loss = true;
    }
    if (use_d) {
      Rng drng(derive_seed(gop_seed, 0xd1ff));
      auto ld = loss_diffusion(tape, m, diffusion_inputs(graph.bundle), *chan, sched, cfg.lambda, drng);
      ld_val = static_cast<double>(ld.value()[0]);
      loss = has_loss ? nn::add(loss, nn::scale(ld, cfg.mu)) : ld;
    }
    const double total = static_cast<double>(loss.value()[0]);
    tape.backward(loss);
    adam.lr = nn::stepped_lr(cfg.lr_start, cfg.lr_end, cfg.lr_steps, step, cfg.steps);
    nn::adamw_step(m.params, adam);
    res.loss.push_back(total);
    if (use_r) res.reconstruction.push_back(lr_val);
    if (use_d) res.diffusion.push_back(ld_val);
    if (on_step) on_step(step, total);
  }
  m.params.set_all_trainable(true);
  return res;
}

/// Mean of the first and last `window` entries; used to judge loss decrease.
inline std::pair<double, double> head_tail_means(const std::vector<double>& v, std::size_t window) {
  if (v.empty()) return {0.0, 0.0};
  window = std::max<std::size_t>(1, std::min(window, v.size()));
  double h = 0.0, t = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    h += v[i];
    t += v[v.size() - 1 - i];
  }
  return {h / static_cast<double>(window), t / static_cast<double>(window)};
}

}  // namespace wvsc
