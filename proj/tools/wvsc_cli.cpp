// wvsc: data generation, staged training, GoP simulation and parameter sweeps.

#include <algorithm>
#include <cmath>
#include <memory>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wvsc/config.hpp"
#include "wvsc/data.hpp"
#include "wvsc/evaluate.hpp"
#include "wvsc/nn/weights_io.hpp"

namespace {

using namespace wvsc;
using Bundle = models::ModelBundle<float>;

constexpr int kExitUsage = 2;
constexpr int kExitPrerequisite = 3;
constexpr int kExitRuntime = 4;

constexpr const char* kCsvHeader = "gop,frame,role,psnr_db,ms_ssim,snr_db,m,lambda,k,seed";

/// Invalid user input detected after flag parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Required weights are absent.
struct PrerequisiteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> data;
  int jobs = 1;
};

ExperimentConfig load_experiment(const CommonOptions& c) {
  return c.config.empty() ? [] {
    ExperimentConfig e;
    e.model.sync();
    return e;
  }()
                          : load_config(c.config);
}

int effective_jobs(int flag) {
  if (const char* env = std::getenv("WVSC_THREADS"); env != nullptr && *env != '\0') {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw UsageError(std::string("WVSC_THREADS must be an integer, got '") + env + "'");
    }
  }
  return std::max(1, flag);
}

std::vector<VideoClip> load_clips(const std::vector<std::string>& paths) {
  std::vector<VideoClip> clips;
  for (const auto& p : paths) {
    try {
      clips.push_back(read_clip(p));
    } catch (const FormatError& e) {
      throw UsageError(e.what());
    }
  }
  return clips;
}

nlohmann::json model_signature(const models::ModelConfig& m) {
  return {{"width", m.codec.width},      {"height", m.codec.height},   {"code_length", m.codec.code_length},
          {"coeffs_per_block", m.codec.coeffs_per_block},              {"unet_c0", m.unet.c0},
          {"unet_c1", m.unet.c1},        {"time_dim", m.unet.time_dim}, {"mfa_token", m.mfa.token},
          {"mfa_embed", m.mfa.embed},    {"motion_channels", m.motion.channels}};
}

/// Loads weights and returns the stages recorded in their manifest.
std::set<int> load_checkpoint(Bundle& m, const std::string& path) {
  if (!std::filesystem::exists(path) || !std::filesystem::exists(path + ".json")) {
    throw PrerequisiteError("weights not found: " + path);
  }
  std::set<int> stages;
  try {
    const auto manifest = nn::read_manifest(path);
    const auto meta = manifest.value("meta", nlohmann::json::object());
    if (meta.contains("model") && meta["model"] != model_signature(m.config())) {
      throw UsageError("weights " + path + " were trained with a different [model] configuration");
    }
    for (const auto& s : meta.value("stages", nlohmann::json::array())) stages.insert(s.get<int>());
    nn::load_weights(m.params, path);
  } catch (const nn::WeightsFormatError& e) {
    throw UsageError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad weights manifest " + path + ".json: " + e.what());
  }
  return stages;
}

std::unique_ptr<Bundle> build_model(const models::ModelConfig& cfg) {
  try {
    return std::make_unique<Bundle>(cfg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid [model] configuration: ") + e.what());
  }
}

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string csv_rows(const std::vector<FrameResult>& rows) {
  std::ostringstream out;
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%c,%.6f,%.6f,%s,%d,%s,%s,%llu\n", r.gop, r.frame, r.role, r.psnr_db,
                  r.ms_ssim, format_real(r.snr_db).c_str(), r.m, format_real(r.lambda).c_str(),
                  format_real(r.k).c_str(), static_cast<unsigned long long>(r.seed));
    out << buf;
  }
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

nlohmann::json summary_json(const std::vector<FrameResult>& rows) {
  const EvalEntry e = summarize_results(rows);
  return {{"mean_psnr_db", e.mean_psnr_db}, {"mean_ms_ssim", e.mean_ms_ssim}, {"frames", e.frames}};
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  std::string out;
  int frames = 10;
  std::string size = "128x128";
  std::string motion = "rect:2,0";
  std::uint64_t seed = 0;
  int fps = 25;
};

int run_gen(const GenOptions& o) {
  int w = 0, h = 0;
  char x = 0, extra = 0;
  std::istringstream ss(o.size);
  if (!(ss >> w >> x >> h) || x != 'x' || (ss >> extra)) throw UsageError("--size must look like WxH, got " + o.size);
  MotionSpec spec;
  try {
    spec = parse_motion_spec(o.motion, o.seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  VideoClip clip;
  try {
    clip = generate_clip(spec, w, h, o.frames);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  clip.fps = o.fps;
  write_clip(clip, o.out);
  std::cout << "wrote " << o.out << ": " << clip.frame_count << " frames " << w << "x" << h << ", payload "
            << clip.data.size() << " bytes\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  CommonOptions common;
  int stage = 1;
  std::string out_weights;
  std::string in_weights;
  std::string log;
  int steps = 0;
};

int run_train(const TrainOptions& o) {
  const ExperimentConfig cfg = load_experiment(o.common);
  auto model = build_model(cfg.model);
  Bundle& m = *model;
  std::set<int> completed;
  std::string source = o.in_weights;
  if (source.empty() && o.stage > 1 && std::filesystem::exists(o.out_weights)) source = o.out_weights;
  if (!source.empty()) {
    completed = load_checkpoint(m, source);
  }
  for (int s : stage_prerequisites(o.stage)) {
    if (!completed.contains(s)) {
      throw PrerequisiteError("stage " + std::to_string(o.stage) + " needs weights that completed stage " +
                              std::to_string(s) + (source.empty() ? " (pass --in-weights)" : " (" + source + " has not)"));
    }
  }
  TrainConfig tc = cfg.stage(o.stage);
  if (o.steps > 0) tc.steps = o.steps;
  const std::vector<VideoClip> clips =
      o.common.data.empty() ? synthetic_clips(cfg.train_clips, cfg.model.codec.width, cfg.model.codec.height,
                                              cfg.train_clip_frames, cfg.train.seed)
                            : load_clips(o.common.data);
  try {
    require_clips(clips, cfg.model.codec.width, cfg.model.codec.height, tc.gop_size);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const NoiseSchedule sched = cfg.diffusion.schedule();
  const int report_every = std::max(1, tc.steps / 10);
  const TrainResult res = train_stage(m, clips, tc, sched, completed, [&](int step, double loss) {
    if ((step + 1) % report_every == 0) std::cerr << "stage " << o.stage << " step " << step + 1 << "/" << tc.steps
                                                  << " loss " << loss << '\n';
  });
  completed.insert(o.stage);
  nlohmann::json meta = {{"stages", std::vector<int>(completed.begin(), completed.end())},
                         {"model", model_signature(cfg.model)}};
  nn::save_weights(m.params, o.out_weights, meta);

  const std::size_t window = std::max<std::size_t>(1, res.loss.size() / 10);
  const auto [head, tail] = head_tail_means(res.loss, window);
  nlohmann::json log = {{"stage", o.stage},         {"steps", tc.steps},
                        {"loss", res.loss},         {"reconstruction", res.reconstruction},
                        {"diffusion", res.diffusion}, {"initial_mean", head},
                        {"final_mean", tail},       {"window", window}};
  const std::string log_path = o.log.empty() ? o.out_weights + ".loss.json" : o.log;
  write_text(log_path, log.dump(2) + "\n");
  std::cout << "stage " << o.stage << ": loss " << head << " -> " << tail << " (means of " << window
            << " steps); weights " << o.out_weights << ", log " << log_path << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// simulate / sweep

struct SimOptions {
  CommonOptions common;
  std::string weights;
  std::optional<std::string> snr_db;
  std::optional<int> gop_size;
  std::optional<std::string> m;
  std::optional<double> lambda;
  std::optional<double> k;
  std::uint64_t seed = 0;
  bool oracle = false;
  std::string out;
  std::string summary;
};

struct SimContext {
  ExperimentConfig cfg;
  std::unique_ptr<Bundle> model;
  std::vector<VideoClip> clips;
  NoiseSchedule sched;
  SimulateOptions base;
};

SimContext prepare_simulation(const SimOptions& o) {
  SimContext ctx;
  ctx.cfg = load_experiment(o.common);
  auto& cfg = ctx.cfg;
  try {
    if (o.snr_db) cfg.snr_db = detail::parse_real(*o.snr_db, "--snr-db");
    if (o.m) cfg.diffusion.m = parse_start_step(*o.m, "--m");
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (o.lambda) cfg.diffusion.lambda = *o.lambda;
  if (o.k) cfg.diffusion.k = *o.k;
  if (o.gop_size) cfg.eval.gop_size = *o.gop_size;
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  ctx.model = build_model(cfg.model);
  if (!o.weights.empty()) {
    load_checkpoint(*ctx.model, o.weights);
  } else if (!o.oracle) {
    std::cerr << "note: no --weights given; using untrained networks\n";
  }
  ctx.clips = o.common.data.empty() ? synthetic_clips(cfg.eval.clips, cfg.model.codec.width, cfg.model.codec.height,
                                                      cfg.eval.frames, cfg.eval.seed)
                                    : load_clips(o.common.data);
  try {
    require_clips(ctx.clips, cfg.model.codec.width, cfg.model.codec.height, 1);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  ctx.sched = cfg.diffusion.schedule();
  ctx.base.snr_db = cfg.snr_db;
  ctx.base.gop_size = cfg.eval.gop_size;
  ctx.base.comp = cfg.diffusion.compensation();
  ctx.base.k = cfg.diffusion.k;
  ctx.base.oracle = o.oracle;
  ctx.base.seed = o.seed;
  ctx.base.jobs = effective_jobs(o.common.jobs);
  return ctx;
}

int run_simulate(const SimOptions& o) {
  SimContext ctx = prepare_simulation(o);
  const auto rows = simulate(*ctx.model, ctx.clips, ctx.sched, ctx.base);
  write_text(o.out, std::string(kCsvHeader) + "\n" + csv_rows(rows));
  nlohmann::json s = summary_json(rows);
  s["snr_db"] = format_real(ctx.base.snr_db);
  if (!o.summary.empty()) write_text(o.summary, s.dump(2) + "\n");
  if (!o.out.empty() && o.out != "-") std::cerr << s.dump() << '\n';
  return 0;
}

struct SweepOptions {
  SimOptions sim;
  std::string param;
  std::string values;
};

int run_sweep(const SweepOptions& o) {
  SimContext ctx = prepare_simulation(o.sim);
  struct Point {
    std::string text;
    double key = 0.0;
    SimulateOptions opt;
    std::vector<FrameResult> rows;
  };
  std::vector<Point> points;
  for (const auto& item : detail::split_list(o.values)) {
    Point p;
    p.text = item;
    p.opt = ctx.base;
    p.opt.jobs = 1;
    try {
      if (o.param == "snr") {
        p.opt.snr_db = p.key = detail::parse_real(item, "--values");
      } else if (o.param == "m") {
        p.opt.comp.start_step = parse_start_step(item, "--values");
        if (p.opt.comp.start_step > ctx.sched.total_steps) throw ConfigError("--values: m exceeds total steps");
        p.key = p.opt.comp.start_step;
      } else if (o.param == "lambda") {
        p.opt.comp.lambda = p.key = detail::parse_real(item, "--values");
        if (!(p.key >= 0.0 && p.key <= 1.0)) throw ConfigError("--values: lambda must lie in [0, 1]");
      } else {
        p.opt.gop_size = detail::parse_integer<int>(item, "--values");
        if (p.opt.gop_size < 1) throw ConfigError("--values: GoP size must be >= 1");
        p.key = p.opt.gop_size;
      }
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    points.push_back(std::move(p));
  }
  if (points.empty()) throw UsageError("--values must list at least one value");
  std::stable_sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.key < b.key; });
  parallel_for(points.size(), ctx.base.jobs,
               [&](std::size_t i) { points[i].rows = simulate(*ctx.model, ctx.clips, ctx.sched, points[i].opt); });

  std::string csv = std::string(kCsvHeader) + "\n";
  nlohmann::json summary = {{"param", o.param}, {"points", nlohmann::json::array()}};
  for (const auto& p : points) {
    csv += csv_rows(p.rows);
    nlohmann::json s = summary_json(p.rows);
    s["value"] = p.text;
    summary["points"].push_back(s);
  }
  write_text(o.sim.out, csv);
  const std::string summary_path =
      !o.sim.summary.empty() ? o.sim.summary : (o.sim.out.empty() || o.sim.out == "-" ? "" : o.sim.out + ".summary.json");
  if (summary_path.empty()) {
    std::cerr << summary.dump(2) << '\n';
  } else {
    write_text(summary_path, summary.dump(2) + "\n");
  }
  return 0;
}

void add_common(CLI::App* sub, CommonOptions& c) {
  sub->add_option("--config", c.config, "Experiment config (INI with [channel] [diffusion] [model] [train] [eval])")
      ->check(CLI::ExistingFile);
  sub->add_option("--data", c.data, "Clip file(s) written by 'gen'; synthetic clips are generated when omitted");
  sub->add_option("--jobs", c.jobs, "Worker threads (overridden by WVSC_THREADS)")->check(CLI::PositiveNumber);
}

void add_simulation(CLI::App* sub, SimOptions& s) {
  add_common(sub, s.common);
  sub->add_option("--weights", s.weights, "Trained weights from 'train'");
  sub->add_option("--snr-db", s.snr_db, "Channel SNR in dB, or 'inf' for a noiseless channel (default 12)");
  sub->add_option("--gop-size", s.gop_size, "Frames per GoP (default 10)")->check(CLI::PositiveNumber);
  sub->add_option("--m", s.m, "DDMFC start step, or 'auto' for the noise-matched step (default 10)");
  sub->add_option("--lambda", s.lambda, "Base/residual weight lambda (default 0.7)")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--k", s.k, "Steering scale k(t) (default 0.3)")->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", s.seed, "Master seed for fading, noise and sampling");
  sub->add_flag("--oracle", s.oracle, "Use clean-target oracle noise predictors");
  sub->add_option("--out", s.out, "CSV output path ('-' or omitted: stdout)");
  sub->add_option("--summary", s.summary, "JSON summary output path");
  sub->footer(std::string("CSV columns: ") + kCsvHeader +
              "\n  role is I or P; frame is 1-based within its GoP; psnr_db is capped at 99.");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wireless video semantic transmission simulator"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic clip (raw planar RGB + JSON sidecar)");
  gen_cmd->add_option("--out", gen.out, "Output clip path")->required();
  gen_cmd->add_option("--frames", gen.frames, "Frame count")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--size", gen.size, "Frame size WxH, multiples of 8");
  gen_cmd->add_option("--motion", gen.motion, "kind:dx,dy[:background], kind in rect|sine|checker, "
                                              "background in flat|gradient|noise");
  gen_cmd->add_option("--seed", gen.seed, "Content seed");
  gen_cmd->add_option("--fps", gen.fps, "Frame rate recorded in the sidecar")->check(CLI::PositiveNumber);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage (1: joint, 2: compensation, 3: decoder)");
  train_cmd->add_option("--stage", train.stage, "Stage 1, 2 or 3")->required()->check(CLI::IsMember({1, 2, 3}));
  add_common(train_cmd, train.common);
  train_cmd->add_option("--out-weights", train.out_weights, "Output weights path")->required();
  train_cmd->add_option("--in-weights", train.in_weights,
                        "Starting weights (stages 2 and 3 default to --out-weights when it exists)");
  train_cmd->add_option("--log", train.log, "Loss-curve JSON path (default OUT.loss.json)");
  train_cmd->add_option("--steps", train.steps, "Override the configured step count")->check(CLI::PositiveNumber);

  SimOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Transmit the dataset GoP by GoP and report per-frame quality");
  add_simulation(sim_cmd, sim);

  SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Repeat 'simulate' over values of one parameter");
  add_simulation(sweep_cmd, sweep.sim);
  sweep_cmd->add_option("--param", sweep.param, "Swept parameter")->required()->check(
      CLI::IsMember({"snr", "m", "lambda", "gop"}));
  sweep_cmd->add_option("--values", sweep.values, "Comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(train);
    if (*sim_cmd) return run_simulate(sim);
    if (*sweep_cmd) return run_sweep(sweep);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const PrerequisiteError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitPrerequisite;
  } catch (const PipelineError& e) {
    std::cerr << "error: pipeline failure in stage '" << e.stage() << "': " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
