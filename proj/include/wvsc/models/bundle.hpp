#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "wvsc/diffusion.hpp"
#include "wvsc/frame.hpp"
#include "wvsc/models/codec.hpp"
#include "wvsc/models/mfa.hpp"
#include "wvsc/models/motion.hpp"
#include "wvsc/models/unet.hpp"

namespace wvsc::models {

struct ModelConfig {
  CodecConfig codec;
  UNetConfig unet;
  MfaConfig mfa;
  MotionConfig motion;
  std::size_t window = 3;  ///< previous reconstructed frames seen by the residual predictor
  std::uint64_t init_seed = 1;

  /// Propagates the code length into the sub-network configs.
  ModelConfig& sync() {
    const auto l = static_cast<std::size_t>(codec.code_length);
    unet.length = l;
    mfa.length = l;
    motion.length = l;
    return *this;
  }
};

/// Parameter groups, used for stage freezing.
inline const char* const kJsccEncoder = "jscc.encoder";
inline const char* const kJsccDecoder = "jscc.decoder";
inline const char* const kMotionEncoder = "motion.encoder";
inline const char* const kMotionDecoder = "motion.decoder";
inline const char* const kBasePredictor = "diffusion.base";
inline const char* const kResidualPredictor = "diffusion.residual";

/// Every network of the system over one parameter store.
template <typename T>
class ModelBundle {
 public:
  explicit ModelBundle(ModelConfig cfg)
      : cfg_(cfg.sync()),
        rng_(cfg_.init_seed),
        codec(cfg_.codec, params, "jscc"),
        motion_encoder(cfg_.motion, params, kMotionEncoder, rng_),
        motion_decoder(cfg_.motion, params, kMotionDecoder, rng_),
        base_unet(cfg_.unet, params, std::string(kBasePredictor) + ".unet", rng_),
        mfa(cfg_.mfa, params, std::string(kResidualPredictor) + ".mfa", rng_),
        residual_unet(cfg_.unet, params, std::string(kResidualPredictor) + ".unet", rng_) {}

  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  const ModelConfig& config() const { return cfg_; }
  std::size_t code_length() const { return codec.code_length(); }

  /// Base noise estimate eps_ref(z_t, t) on a caller tape.
  nn::Var<T> base_forward(nn::Tape<T>& tape, nn::Var<T> z, int t) const { return base_unet.forward(tape, z, t); }

  /// Residual noise phi(z'_t, t | previous): MFA fusion, then the U-Net trunk.
  /// Uses the newest `window` entries of `previous`.
  nn::Var<T> residual_forward(nn::Tape<T>& tape, nn::Var<T> z_prime, int t, std::vector<nn::Var<T>> previous,
                              MfaAttention<T>* maps = nullptr) const {
    if (previous.size() > cfg_.window) previous.erase(previous.begin(), previous.end() - cfg_.window);
    return residual_unet.forward(tape, mfa.fuse(tape, z_prime, previous, maps), t);
  }

  SemanticFrame base_predict(FrameView z, int t) const {
    nn::Tape<T> tape;
    return to_frame(base_forward(tape, constant(tape, z), t));
  }

  SemanticFrame residual_predict(FrameView z_prime, int t, const FrameList& previous) const {
    nn::Tape<T> tape;
    std::vector<nn::Var<T>> prev;
    const std::size_t first = previous.size() > cfg_.window ? previous.size() - cfg_.window : 0;
    for (std::size_t i = first; i < previous.size(); ++i) prev.push_back(constant(tape, previous[i]));
    return to_frame(residual_forward(tape, constant(tape, z_prime), t, prev));
  }

  nn::Var<T> constant(nn::Tape<T>& tape, FrameView f) const {
    return tape.constant(nn::Tensor<T>::template from<double>(nn::Shape{1, f.size()}, f));
  }

  static SemanticFrame to_frame(nn::Var<T> v) {
    SemanticFrame out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(v.value()[i]);
    return out;
  }

  nn::ParamStore<T> params;

 private:
  ModelConfig cfg_;
  Rng rng_;

 public:
  SemanticCodec<T> codec;
  MotionCoder<T> motion_encoder;
  MotionCoder<T> motion_decoder;
  UNetLite<T> base_unet;
  MfaFusion<T> mfa;
  UNetLite<T> residual_unet;
};

/// NoisePredictor views of the bundle's diffusion networks.
template <typename T>
class BasePredictor final : public NoisePredictor {
 public:
  explicit BasePredictor(const ModelBundle<T>& m) : m_(m) {}
  SemanticFrame predict(FrameView z, int t, const FrameList&) const override { return m_.base_predict(z, t); }

 private:
  const ModelBundle<T>& m_;
};

template <typename T>
class ResidualPredictor final : public NoisePredictor {
 public:
  explicit ResidualPredictor(const ModelBundle<T>& m) : m_(m) {}
  SemanticFrame predict(FrameView z, int t, const FrameList& previous) const override {
    return m_.residual_predict(z, t, previous);
  }

 private:
  const ModelBundle<T>& m_;
};

}  // namespace wvsc::models
