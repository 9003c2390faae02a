#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "wvsc/metrics.hpp"
#include "wvsc/training.hpp"

namespace wvsc {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception is
/// rethrown after all workers stop.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct SimulateOptions {
  double snr_db = 12.0;
  int gop_size = 10;
  CompensationParams comp;
  double k = 0.3;  ///< reported; comp.steering carries the value used
  bool oracle = false;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct FrameResult {
  int gop = 0;
  int frame = 0;  ///< 1-based position in the GoP
  char role = 'I';
  double psnr_db = 0.0;
  double ms_ssim = 0.0;
  double snr_db = 0.0;
  int m = 0;
  double lambda = 0.0;
  double k = 0.0;
  std::uint64_t seed = 0;
};

/// Transmits every GoP of the dataset at one SNR. GoP g uses the streams
/// derived from (seed, g), so results do not depend on the job count.
template <typename T>
std::vector<FrameResult> simulate(const models::ModelBundle<T>& m, const std::vector<VideoClip>& clips,
                                  const NoiseSchedule& sched, const SimulateOptions& opt) {
  const auto& cc = m.config().codec;
  require_clips(clips, cc.width, cc.height, 1);
  const auto gops = split_gops(clips, opt.gop_size);
  std::vector<std::vector<FrameResult>> per_gop(gops.size());
  GopOptions gopt;
  gopt.comp = opt.comp;
  gopt.oracle = opt.oracle;
  parallel_for(gops.size(), opt.jobs, [&](std::size_t g) {
    const std::uint64_t gop_seed = derive_seed(opt.seed, g);
    const auto chan = draw_gop_channel(m.code_length(), opt.snr_db, derive_seed(gop_seed, 0xc4a2));
    const GopBundle b = transmit_gop(m, gop_frames(clips, gops[g]), chan, sched, gopt, gop_seed);
    for (std::size_t i = 0; i < b.size(); ++i) {
      FrameResult r;
      r.gop = static_cast<int>(g);
      r.frame = static_cast<int>(i) + 1;
      r.role = i == 0 ? 'I' : 'P';
      r.psnr_db = psnr(b.frames[i], b.decoded[i]);
      r.ms_ssim = ms_ssim(b.frames[i], b.decoded[i], cc.width, cc.height);
      r.snr_db = opt.snr_db;
      r.m = effective_start_step(opt.comp.start_step, b.channel->sigma2(), sched);
      r.lambda = opt.comp.lambda;
      r.k = opt.k;
      r.seed = opt.seed;
      per_gop[g].push_back(r);
    }
  });
  std::vector<FrameResult> out;
  for (auto& v : per_gop) out.insert(out.end(), v.begin(), v.end());
  return out;
}

struct EvalEntry {
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  double mean_psnr_db = 0.0;
  double mean_ms_ssim = 0.0;
  std::size_t frames = 0;
};

inline EvalEntry summarize_results(const std::vector<FrameResult>& rows) {
  EvalEntry e;
  if (rows.empty()) return e;
  e.snr_db = rows.front().snr_db;
  e.seed = rows.front().seed;
  for (const auto& r : rows) {
    e.mean_psnr_db += r.psnr_db;
    e.mean_ms_ssim += r.ms_ssim;
  }
  e.frames = rows.size();
  e.mean_psnr_db /= static_cast<double>(rows.size());
  e.mean_ms_ssim /= static_cast<double>(rows.size());
  return e;
}

/// Mean PSNR / MS-SSIM for every (SNR, seed) pair, SNR-major.
template <typename T>
std::vector<EvalEntry> evaluate(const models::ModelBundle<T>& m, const std::vector<VideoClip>& clips,
                                const NoiseSchedule& sched, const std::vector<double>& snr_list,
                                const std::vector<std::uint64_t>& seeds, SimulateOptions base = {}) {
  std::vector<EvalEntry> table;
  for (double snr : snr_list) {
    for (std::uint64_t seed : seeds) {
      base.snr_db = snr;
      base.seed = seed;
      table.push_back(summarize_results(simulate(m, clips, sched, base)));
    }
  }
  return table;
}

}  // namespace wvsc
