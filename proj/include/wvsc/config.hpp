#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wvsc/ddmfc.hpp"
#include "wvsc/diffusion.hpp"
#include "wvsc/models/bundle.hpp"
#include "wvsc/training.hpp"

namespace wvsc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DiffusionConfig {
  int total_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int m = 10;  ///< negative: pick the noise-matched step per channel
  double lambda = 0.7;
  double k = 0.3;
  double sigma_t = 0.0;

  NoiseSchedule schedule() const { return build_schedule(total_steps, beta_start, beta_end); }
  CompensationParams compensation() const {
    CompensationParams p;
    p.lambda = lambda;
    p.steering = constant_steering(k);
    p.sigma_t = sigma_t;
    p.start_step = m;
    return p;
  }
};

struct EvalConfig {
  int gop_size = 10;
  int clips = 4;
  int frames = 10;
  std::uint64_t seed = 1000;
  std::vector<double> snr_list{0.0, 6.0, 12.0, 18.0};
  std::vector<std::uint64_t> seeds{1};
  int jobs = 1;
};

struct ExperimentConfig {
  double snr_db = 12.0;
  DiffusionConfig diffusion;
  models::ModelConfig model;
  TrainConfig train;
  std::array<int, 3> stage_steps{0, 0, 0};  ///< per-stage overrides of train.steps; 0 = use steps
  int train_clips = 16;
  int train_clip_frames = 12;
  EvalConfig eval;

  TrainConfig stage(int s) const {
    TrainConfig t = train;
    t.stage = s;
    if (s >= 1 && s <= 3 && stage_steps[static_cast<std::size_t>(s - 1)] > 0) {
      t.steps = stage_steps[static_cast<std::size_t>(s - 1)];
    }
    t.lambda = diffusion.lambda;
    t.k = diffusion.k;
    t.m = diffusion.m;
    return t;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename I>
I parse_integer(const std::string& raw, const std::string& key) {
  const std::string v = trim(raw);
  I out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + raw + "'");
  }
  return out;
}

inline double parse_real(const std::string& raw, const std::string& key) {
  const std::string v = trim(raw);
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw ConfigError(key + ": expected a number, got '" + raw + "'");
  return out;
}

inline bool parse_bool(const std::string& raw, const std::string& key) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

inline std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// Start step from text: an integer, or "auto" for the noise-matched step.
inline int parse_start_step(const std::string& raw, const std::string& key = "m") {
  if (detail::trim(raw) == "auto") return -1;
  const int m = detail::parse_integer<int>(raw, key);
  if (m < 0) throw ConfigError(key + ": must be >= 0 or 'auto'");
  return m;
}

/// Applies "section.key = value" text settings on top of `cfg`.
inline void apply_setting(ExperimentConfig& cfg, const std::string& section, const std::string& key,
                          const std::string& value) {
  using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto integer = [](auto get) {
      return Setter([get](ExperimentConfig& c, const std::string& v, const std::string& k) {
        get(c) = detail::parse_integer<std::remove_reference_t<decltype(get(c))>>(v, k);
      });
    };
    auto real = [](auto get) {
      return Setter([get](ExperimentConfig& c, const std::string& v, const std::string& k) {
        get(c) = detail::parse_real(v, k);
      });
    };
    auto boolean = [](auto get) {
      return Setter([get](ExperimentConfig& c, const std::string& v, const std::string& k) {
        get(c) = detail::parse_bool(v, k);
      });
    };
    t["channel.snr_db"] = real([](ExperimentConfig& c) -> double& { return c.snr_db; });

    t["diffusion.total_steps"] = integer([](ExperimentConfig& c) -> int& { return c.diffusion.total_steps; });
    t["diffusion.beta_start"] = real([](ExperimentConfig& c) -> double& { return c.diffusion.beta_start; });
    t["diffusion.beta_end"] = real([](ExperimentConfig& c) -> double& { return c.diffusion.beta_end; });
    t["diffusion.m"] = [](ExperimentConfig& c, const std::string& v, const std::string& k) {
      c.diffusion.m = parse_start_step(v, k);
    };
    t["diffusion.lambda"] = real([](ExperimentConfig& c) -> double& { return c.diffusion.lambda; });
    t["diffusion.k"] = real([](ExperimentConfig& c) -> double& { return c.diffusion.k; });
    t["diffusion.sigma_t"] = real([](ExperimentConfig& c) -> double& { return c.diffusion.sigma_t; });

    t["model.width"] = integer([](ExperimentConfig& c) -> int& { return c.model.codec.width; });
    t["model.height"] = integer([](ExperimentConfig& c) -> int& { return c.model.codec.height; });
    t["model.code_length"] = integer([](ExperimentConfig& c) -> int& { return c.model.codec.code_length; });
    t["model.coeffs_per_block"] = integer([](ExperimentConfig& c) -> int& { return c.model.codec.coeffs_per_block; });
    t["model.unet_c0"] = integer([](ExperimentConfig& c) -> std::size_t& { return c.model.unet.c0; });
    t["model.unet_c1"] = integer([](ExperimentConfig& c) -> std::size_t& { return c.model.unet.c1; });
    t["model.time_dim"] = integer([](ExperimentConfig& c) -> std::size_t& { return c.model.unet.time_dim; });
    t["model.mfa_token"] = integer([](ExperimentConfig& c) -> std::size_t& { return c.model.mfa.token; });
    t["model.mfa_embed"] = integer([](ExperimentConfig& c) -> std::size_t& { return c.model.mfa.embed; });
    t["model.mfa_crossed"] = boolean([](ExperimentConfig& c) -> bool& { return c.model.mfa.crossed; });
    t["model.gamma_init"] = real([](ExperimentConfig& c) -> double& { return c.model.mfa.gamma_init; });
    t["model.motion_channels"] = integer([](ExperimentConfig& c) -> std::size_t& { return c.model.motion.channels; });
    t["model.window"] = integer([](ExperimentConfig& c) -> std::size_t& { return c.model.window; });
    t["model.init_seed"] = integer([](ExperimentConfig& c) -> std::uint64_t& { return c.model.init_seed; });

    t["train.mu"] = real([](ExperimentConfig& c) -> double& { return c.train.mu; });
    t["train.gop_size"] = integer([](ExperimentConfig& c) -> int& { return c.train.gop_size; });
    t["train.steps"] = integer([](ExperimentConfig& c) -> int& { return c.train.steps; });
    t["train.stage1_steps"] = integer([](ExperimentConfig& c) -> int& { return c.stage_steps[0]; });
    t["train.stage2_steps"] = integer([](ExperimentConfig& c) -> int& { return c.stage_steps[1]; });
    t["train.stage3_steps"] = integer([](ExperimentConfig& c) -> int& { return c.stage_steps[2]; });
    t["train.lr_start"] = real([](ExperimentConfig& c) -> double& { return c.train.lr_start; });
    t["train.lr_end"] = real([](ExperimentConfig& c) -> double& { return c.train.lr_end; });
    t["train.lr_steps"] = integer([](ExperimentConfig& c) -> int& { return c.train.lr_steps; });
    t["train.weight_decay"] = real([](ExperimentConfig& c) -> double& { return c.train.weight_decay; });
    t["train.snr_min_db"] = real([](ExperimentConfig& c) -> double& { return c.train.snr_min_db; });
    t["train.snr_max_db"] = real([](ExperimentConfig& c) -> double& { return c.train.snr_max_db; });
    t["train.clips"] = integer([](ExperimentConfig& c) -> int& { return c.train_clips; });
    t["train.clip_frames"] = integer([](ExperimentConfig& c) -> int& { return c.train_clip_frames; });
    t["train.seed"] = integer([](ExperimentConfig& c) -> std::uint64_t& { return c.train.seed; });

    t["eval.gop_size"] = integer([](ExperimentConfig& c) -> int& { return c.eval.gop_size; });
    t["eval.clips"] = integer([](ExperimentConfig& c) -> int& { return c.eval.clips; });
    t["eval.frames"] = integer([](ExperimentConfig& c) -> int& { return c.eval.frames; });
    t["eval.seed"] = integer([](ExperimentConfig& c) -> std::uint64_t& { return c.eval.seed; });
    t["eval.jobs"] = integer([](ExperimentConfig& c) -> int& { return c.eval.jobs; });
    t["eval.snr_list"] = [](ExperimentConfig& c, const std::string& v, const std::string& k) {
      c.eval.snr_list.clear();
      for (const auto& s : detail::split_list(v)) c.eval.snr_list.push_back(detail::parse_real(s, k));
      if (c.eval.snr_list.empty()) throw ConfigError(k + ": empty list");
    };
    t["eval.seeds"] = [](ExperimentConfig& c, const std::string& v, const std::string& k) {
      c.eval.seeds.clear();
      for (const auto& s : detail::split_list(v)) c.eval.seeds.push_back(detail::parse_integer<std::uint64_t>(s, k));
      if (c.eval.seeds.empty()) throw ConfigError(k + ": empty list");
    };
    return t;
  }();
  const std::string name = section + "." + key;
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown config key [" + section + "] " + key);
  it->second(cfg, value, name);
}

/// Cross-field checks; throws ConfigError.
inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& why) { throw ConfigError("invalid config: " + why); };
  if (!(c.diffusion.lambda >= 0.0 && c.diffusion.lambda <= 1.0)) fail("diffusion.lambda must lie in [0, 1]");
  if (!(c.diffusion.k >= 0.0)) fail("diffusion.k must be >= 0");
  if (!(c.diffusion.sigma_t >= 0.0)) fail("diffusion.sigma_t must be >= 0");
  if (c.diffusion.m > c.diffusion.total_steps) fail("diffusion.m exceeds diffusion.total_steps");
  if (c.model.codec.code_length % 4 != 0) fail("model.code_length must be a multiple of 4");
  if (c.model.codec.code_length % static_cast<int>(std::max<std::size_t>(1, c.model.mfa.token)) != 0) {
    fail("model.code_length must be a multiple of model.mfa_token");
  }
  if (!(c.train.mu >= 0.0)) fail("train.mu must be >= 0");
  if (c.train.gop_size < 1 || c.eval.gop_size < 1) fail("GoP sizes must be >= 1");
  if (c.train_clip_frames < c.train.gop_size) fail("train.clip_frames must be >= train.gop_size");
  if (c.train.steps < 1) fail("train.steps must be >= 1");
  if (!(c.train.lr_start > 0.0 && c.train.lr_end > 0.0)) fail("learning rates must be > 0");
  if (c.train.snr_max_db < c.train.snr_min_db) fail("train.snr_max_db < train.snr_min_db");
  if (c.eval.clips < 1 || c.eval.frames < 1 || c.train_clips < 1) fail("clip counts must be >= 1");
  try {
    (void)c.diffusion.schedule();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(origin + ": key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      try {
        apply_setting(cfg, section, key, node.get_value<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
      }
    }
  }
  cfg.model.sync();
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, path);
}

}  // namespace wvsc
