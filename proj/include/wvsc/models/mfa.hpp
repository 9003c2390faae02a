#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "wvsc/models/layers.hpp"

namespace wvsc::models {

struct MfaConfig {
  std::size_t length = 128;
  std::size_t token = 8;   ///< entries per token; length / token tokens per frame
  std::size_t embed = 16;  ///< query/key/value width
  bool crossed = false;    ///< pair current queries with previous keys (and vice versa)
  double gamma_init = 0.1;
};

/// Attention maps from the last fuse() call, for inspection.
template <typename T>
struct MfaAttention {
  std::vector<nn::Tensor<T>> current;   ///< rows: current-frame queries
  std::vector<nn::Tensor<T>> previous;  ///< rows: previous-frame queries
};

/// Multi-frame fusion attention. Each frame of length L is cut into L/d tokens
/// of d entries. With the printed pairing, one attention map per previous
/// frame is formed and the outputs are averaged over previous frames:
///
///   cur_j = softmax(Q_cur K_cur^T) V_pre_j,   pre_j = softmax(Q_pre_j K_pre_j^T) V_cur
///
/// The crossed variant attends Q_cur against all previous keys (sequence
/// concatenated) and block-averages the previous-query output. Both halves
/// are concatenated on features, projected back to d entries per token, and
/// added to the current input with weight gamma.
template <typename T>
class MfaFusion {
 public:
  MfaFusion(const MfaConfig& cfg, nn::ParamStore<T>& store, const std::string& prefix, Rng& rng)
      : cfg_(cfg), store_(store), p_(prefix) {
    if (cfg.token == 0 || cfg.length % cfg.token != 0) {
      throw std::invalid_argument("MfaFusion: length must be a multiple of the token size");
    }
    const auto d = cfg.token, e = cfg.embed;
    for (const char* n : {".q_cur", ".k_cur", ".v_cur", ".q_pre", ".k_pre", ".v_pre"}) {
      add_dense(store, p_ + n, d, e, rng);
    }
    add_dense(store, p_ + ".proj", 2 * e, d, rng);
    if (!store.contains(p_ + ".gamma")) {
      store.add(p_ + ".gamma", nn::Tensor<T>::scalar(static_cast<T>(cfg.gamma_init)));
    }
  }

  const MfaConfig& config() const { return cfg_; }
  nn::Parameter<T>& gamma() const { return store_.get(p_ + ".gamma"); }

  /// current: L entries; previous: nonempty list of L-entry nodes (oldest
  /// first). Returns a (1 x L) node.
  nn::Var<T> fuse(nn::Tape<T>& tape, nn::Var<T> current, const std::vector<nn::Var<T>>& previous,
                  MfaAttention<T>* maps = nullptr) const {
    if (previous.empty()) throw std::invalid_argument("mfa_fuse: previous frame list is empty");
    const std::size_t n = cfg_.length / cfg_.token, d = cfg_.token;
    if (current.size() != cfg_.length) throw std::invalid_argument("mfa_fuse: current frame length mismatch");
    auto tokens = [&](nn::Var<T> f) {
      if (f.size() != cfg_.length) throw std::invalid_argument("mfa_fuse: previous frame length mismatch");
      return nn::reshape(f, {n, d});
    };
    auto& s = store_;
    auto cur = tokens(current);
    auto q_cur = dense(tape, s, p_ + ".q_cur", cur);
    auto k_cur = dense(tape, s, p_ + ".k_cur", cur);
    auto v_cur = dense(tape, s, p_ + ".v_cur", cur);
    std::vector<nn::Var<T>> q_pre, k_pre, v_pre;
    for (const auto& f : previous) {
      auto tk = tokens(f);
      q_pre.push_back(dense(tape, s, p_ + ".q_pre", tk));
      k_pre.push_back(dense(tape, s, p_ + ".k_pre", tk));
      v_pre.push_back(dense(tape, s, p_ + ".v_pre", tk));
    }
    const double inv = 1.0 / static_cast<double>(previous.size());
    nn::Var<T> f_cur, f_pre;
    if (!cfg_.crossed) {
      auto a_cur = nn::softmax_rows(nn::matmul(q_cur, nn::transpose(k_cur)));
      nn::Var<T> v_mean = v_pre[0];
      for (std::size_t j = 1; j < v_pre.size(); ++j) v_mean = nn::add(v_mean, v_pre[j]);
      f_cur = nn::matmul(a_cur, nn::scale(v_mean, inv));
      if (maps) maps->current.push_back(a_cur.value());
      for (std::size_t j = 0; j < previous.size(); ++j) {
        nn::Var<T> a;
        auto out = nn::attention(q_pre[j], k_pre[j], v_cur, 1.0, &a);
        f_pre = j == 0 ? out : nn::add(f_pre, out);
        if (maps) maps->previous.push_back(a.value());
      }
      f_pre = nn::scale(f_pre, inv);
    } else {
      auto k_all = nn::concat<T>(k_pre, 0);
      auto v_all = nn::concat<T>(v_pre, 0);
      nn::Var<T> a_cur, a_pre;
      f_cur = nn::attention(q_cur, k_all, v_all, 1.0, &a_cur);
      auto out = nn::attention(nn::concat<T>(q_pre, 0), k_cur, v_cur, 1.0, &a_pre);
      for (std::size_t j = 0; j < previous.size(); ++j) {
        auto blk = nn::slice_rows(out, j * n, n);
        f_pre = j == 0 ? blk : nn::add(f_pre, blk);
      }
      f_pre = nn::scale(f_pre, inv);
      if (maps) {
        maps->current.push_back(a_cur.value());
        maps->previous.push_back(a_pre.value());
      }
    }
    auto com = nn::concat<T>({f_pre, f_cur}, 1);
    auto proj = nn::reshape(dense(tape, s, p_ + ".proj", com), {1, cfg_.length});
    auto g = tape.param(s.get(p_ + ".gamma"));
    return nn::add(nn::reshape(current, {1, cfg_.length}), nn::scale_by(proj, g));
  }

 private:
  MfaConfig cfg_;
  nn::ParamStore<T>& store_;
  std::string p_;
};

}  // namespace wvsc::models
