#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ivmc/common.hpp"
#include "ivmc/env/env.hpp"
#include "ivmc/nn/losses.hpp"
#include "ivmc/policy/policy.hpp"

namespace ivmc::unc {

inline constexpr double kNormEps = 1e-9;
inline constexpr std::size_t kWindow = 20;
inline constexpr std::size_t kDefaultSamples = 50;

struct ActionSampleSet {
  std::vector<policy::HeadOutputs> samples;
  std::uint64_t tick = 0;
};

// Splits a translation command into weighted norm and unit-direction parts so
// that small near-goal commands still report directional spread.
inline std::array<double, 4> transform_action(const env::Vec3& u, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("transform_action: lambda must lie in [0,1]");
  const double n = u.norm();
  if (n < kNormEps) return {lambda * n, 0.0, 0.0, 0.0};
  const double w = (1.0 - lambda) / n;
  return {lambda * n, w * u.x, w * u.y, w * u.z};
}

// Trace of the unbiased sample covariance of the transformed translation
// samples. The gripper head does not participate.
inline double uncertainty_from_samples(const ActionSampleSet& set, double lambda) {
  const std::size_t s = set.samples.size();
  if (s < 2)
    throw std::invalid_argument("uncertainty_from_samples: need at least 2 samples");
  std::array<double, 4> mean{0.0, 0.0, 0.0, 0.0};
  std::vector<std::array<double, 4>> xs(s);
  for (std::size_t i = 0; i < s; ++i) {
    xs[i] = transform_action(set.samples[i].delta_vec(), lambda);
    for (std::size_t k = 0; k < 4; ++k) mean[k] += xs[i][k];
  }
  for (double& m : mean) m /= static_cast<double>(s);
  double tr = 0.0;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      const double d = xs[i][k] - mean[k];
      tr += d * d;
    }
  return tr / static_cast<double>(s - 1);
}

// Mean translation plus the gripper class with the highest mean softmax
// probability (lowest class index on exact ties).
inline env::ActionCommand mean_action(const ActionSampleSet& set) {
  const std::size_t s = set.samples.size();
  if (s < 1) throw std::invalid_argument("mean_action: empty sample set");
  env::Vec3 d{};
  std::array<double, 3> probs{0.0, 0.0, 0.0};
  for (const auto& smp : set.samples) {
    d.x += smp.delta_ee[0];
    d.y += smp.delta_ee[1];
    d.z += smp.delta_ee[2];
    const std::vector<double> p = nn::softmax(smp.grp_logits);
    for (std::size_t k = 0; k < 3; ++k) probs[k] += p[k];
  }
  const double inv = 1.0 / static_cast<double>(s);
  d = d * inv;
  std::size_t best = 0;
  for (std::size_t k = 1; k < 3; ++k)
    if (probs[k] > probs[best]) best = k;
  static constexpr env::GripperCmd kClasses[3] = {env::GripperCmd::Open,
                                                 env::GripperCmd::Close,
                                                 env::GripperCmd::NoOp};
  return {d, kClasses[best]};
}

struct McResult {
  ActionSampleSet set;
  policy::Embedding e;
};

// One tick of Monte-Carlo sampling: the encoder and LSTM run once (memory
// advances once per tick), then S stochastic passes through the dropout/fc
// stack. Sample i draws from an independent substream of noise_root, so the
// result does not depend on evaluation order.
inline McResult mc_sample(const policy::PolicyModel& model,
                          const std::vector<const env::Observation*>& obs_buffer,
                          const env::ProprioState& proprio, const nn::LstmMemory& mem,
                          nn::LstmMemory& mem_out, std::size_t s,
                          std::uint64_t noise_root, std::uint64_t tick) {
  McResult res;
  res.set.tick = tick;
  policy::StepCache cache;
  const policy::StateRep rep = model.encode(obs_buffer, proprio, cache);
  res.e = model.lstm_advance(rep, mem, cache, mem_out);
  res.set.samples.reserve(s);
  for (std::size_t i = 0; i < s; ++i) {
    Rng noise(derive_seed(noise_root, 0x6d63, tick, i));
    policy::StepCache c2;
    res.set.samples.push_back(model.stack_pass(res.e, true, &noise, c2));
  }
  return res;
}

// Per-tick scalar uncertainties with a sliding-window sum maintained by the
// telescoping update sum += u_new - u_leaving, the same recurrence the online
// controller runs, so consecutive sums differ by exactly that amount.
class UncertaintyTrace {
 public:
  explicit UncertaintyTrace(std::size_t window = kWindow) : window_(window) {
    if (window_ == 0) throw std::invalid_argument("UncertaintyTrace: window must be > 0");
  }

  void push(double u) {
    if (!(u >= 0.0) || !std::isfinite(u))
      throw std::invalid_argument("UncertaintyTrace: uncertainty must be finite and >= 0");
    entries_.push_back(u);
    sum_ += u;
    if (entries_.size() > window_) sum_ -= entries_[entries_.size() - window_ - 1];
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<double>& entries() const { return entries_; }

  void clear() {
    entries_.clear();
    sum_ = 0.0;
  }

  // sum of the last min(t, W) entries (up to round-off of the running update)
  double window_sum() const {
    if (entries_.empty()) throw std::invalid_argument("window_sum: empty trace");
    return sum_;
  }

 private:
  std::size_t window_;
  std::vector<double> entries_;
  double sum_ = 0.0;
};

struct ValidationRecord {
  std::uint64_t episode_id = 0;
  double max_u = 0.0;  // maximum over ticks of the window sum
  bool success = false;
};

struct ThresholdResult {
  double threshold = std::numeric_limits<double>::infinity();  // C
  std::size_t i_star = 0;  // 1-based index into the sorted scan
  double r_bar = 0.0;
  bool degenerate = false;
  std::vector<double> sorted_u;     // candidates, ascending
  std::vector<double> objectives;   // objective value per candidate
};

// Scans every validation max-window-sum as a candidate threshold and keeps
// the one that maximises (expected successes recovered) minus (successes that
// would be interrupted): |{x: u(x) > u_i}| * r_bar - |{x: u(x) > u_i, success}|.
inline ThresholdResult pick_threshold(std::vector<ValidationRecord> records) {
  if (records.size() < 2)
    throw std::invalid_argument("pick_threshold: need at least 2 records");
  ThresholdResult res;
  std::size_t n_success = 0;
  for (const auto& r : records) n_success += r.success ? 1 : 0;
  res.r_bar = static_cast<double>(n_success) / static_cast<double>(records.size());
  if (n_success == 0 || n_success == records.size()) {
    res.degenerate = true;  // nothing to trade off; caller should warn
    return res;
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const ValidationRecord& a, const ValidationRecord& b) {
                     return a.max_u < b.max_u;
                   });
  res.sorted_u.reserve(records.size());
  for (const auto& r : records) res.sorted_u.push_back(r.max_u);
  res.objectives.resize(records.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double ui = records[i].max_u;
    std::size_t above = 0, above_success = 0;
    for (const auto& r : records)
      if (r.max_u > ui) {
        ++above;
        if (r.success) ++above_success;
      }
    const double obj = static_cast<double>(above) * res.r_bar -
                       static_cast<double>(above_success);
    res.objectives[i] = obj;
    if (obj > best) {
      best = obj;
      res.i_star = i + 1;
      res.threshold = ui;
    }
  }
  return res;
}

struct ConvergencePoint {
  std::size_t s = 0;
  double error = 0.0;  // median per-tick translation error, averaged over episodes
};

// Replays recorded episodes through the model (teacher forcing) and measures
// how the MC mean action's translation error against the recorded expert
// command behaves as the sample count grows.
inline std::vector<ConvergencePoint> mc_convergence_curve(
    const policy::PolicyModel& model, const std::vector<env::EpisodeRecord>& episodes,
    const std::vector<std::size_t>& s_list, std::uint64_t noise_root) {
  if (episodes.empty())
    throw std::invalid_argument("mc_convergence_curve: no episodes");
  std::vector<ConvergencePoint> out;
  for (std::size_t si = 0; si < s_list.size(); ++si) {
    const std::size_t s = s_list[si];
    double err_sum = 0.0;
    for (std::size_t ei = 0; ei < episodes.size(); ++ei) {
      const auto& ep = episodes[ei];
      policy::FrameBuffer buf(model.cfg.frame_buffer);
      nn::LstmMemory mem = model.fresh_memory();
      std::vector<double> errs;
      errs.reserve(ep.steps.size());
      for (std::size_t t = 0; t < ep.steps.size(); ++t) {
        buf.push(ep.steps[t].obs);
        nn::LstmMemory next;
        const McResult mc =
            mc_sample(model, buf.view(), ep.steps[t].proprio, mem, next, s,
                      derive_seed(noise_root, 0x637576, si, ei), t);
        mem = next;
        const env::ActionCommand a = mean_action(mc.set);
        errs.push_back(env::dist(a.delta_ee, ep.steps[t].action.delta_ee));
      }
      std::sort(errs.begin(), errs.end());
      const std::size_t n = errs.size();
      const double med = (n % 2 == 1) ? errs[n / 2]
                                      : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
      err_sum += med;
    }
    out.push_back({s, err_sum / static_cast<double>(episodes.size())});
  }
  return out;
}

}  // namespace ivmc::unc
