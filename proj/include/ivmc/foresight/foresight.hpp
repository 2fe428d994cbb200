#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivmc/common.hpp"
#include "ivmc/env/dataset.hpp"
#include "ivmc/env/env.hpp"
#include "ivmc/nn/checkpoint.hpp"
#include "ivmc/nn/layers.hpp"
#include "ivmc/nn/optimizer.hpp"
#include "ivmc/policy/policy.hpp"
#include "ivmc/uncertainty/uncertainty.hpp"

namespace ivmc::foresight {

inline constexpr std::size_t kActionFeatures = 6;  // 3 translation + 3 gripper probs

// translation plus gripper softmax probabilities of one sampled head output
inline std::vector<double> action_features(const policy::HeadOutputs& h) {
  std::vector<double> f = {h.delta_ee[0], h.delta_ee[1], h.delta_ee[2]};
  const std::vector<double> p = nn::softmax(h.grp_logits);
  f.insert(f.end(), p.begin(), p.end());
  return f;
}

struct ForesightSample {
  std::uint64_t episode_id = 0;
  std::uint64_t tick = 0;
  std::vector<double> e;        // embedding at t
  std::vector<double> action;   // features of the executed action
  double target = 0.0;          // uncertainty at t+1
};

struct ForesightDatasetHeader {
  std::string policy_checksum;
  std::size_t mc_samples = unc::kDefaultSamples;
  double lambda = 0.3;
  std::size_t count = 0;        // episodes collected
  bool log1p_targets = false;   // set at training time if target skew demands it
};

struct ForesightDataset {
  ForesightDatasetHeader header;
  std::vector<ForesightSample> samples;
};

// Two-layer MLP over concat(e_t, action features) with a softplus output so
// the predicted uncertainty is nonnegative by construction.
class ForesightModel {
 public:
  std::size_t embed_width = 64;
  std::size_t hidden = 64;
  bool log1p_targets = false;
  nn::DenseLayer fc1, fc2;

  explicit ForesightModel(std::size_t embed_w = 64, std::size_t hidden_w = 64)
      : embed_width(embed_w), hidden(hidden_w),
        fc1(embed_w + kActionFeatures, hidden_w, nn::Activation::Tanh),
        fc2(hidden_w, 1, nn::Activation::Identity) {}

  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x66737269));
    fc1.init(rng);
    fc2.init(rng);
  }

  std::vector<nn::ParamView> params() {
    auto out = fc1.params("fc1");
    for (auto& p : fc2.params("fc2")) out.push_back(p);
    return out;
  }

  void zero_grad() {
    fc1.zero_grad();
    fc2.zero_grad();
  }

  struct Cache {
    nn::DenseCache c1, c2;
    double raw = 0.0;  // softplus(fc2 output), pre target-transform inversion
  };

  // model-space output: softplus of the linear head
  double forward(const std::vector<double>& e, const std::vector<double>& a,
                 Cache& cache) const {
    if (e.size() != embed_width || a.size() != kActionFeatures)
      throw std::invalid_argument("foresight forward: input width mismatch");
    std::vector<double> x = e;
    x.insert(x.end(), a.begin(), a.end());
    fc1.forward(x, cache.c1);
    fc2.forward(cache.c1.y, cache.c2);
    cache.raw = softplus(cache.c2.y[0]);
    return cache.raw;
  }

  // d(loss)/d(raw output) in, parameter gradients accumulated
  void backward(const Cache& cache, double draw) {
    const double dz = draw * sigmoid(cache.c2.y[0]);  // softplus'
    std::vector<double> dhid, dx;
    fc2.backward(cache.c2, {dz}, dhid);
    fc1.backward(cache.c1, dhid, dx);
  }

  nlohmann::json arch() const {
    return {{"kind", "foresight_mlp"},
            {"embed_width", embed_width},
            {"hidden", hidden},
            {"log1p_targets", log1p_targets}};
  }

  void save(const std::string& path) {
    nn::save_checkpoint_file(path, arch(), params());
  }

  static ForesightModel load(const std::string& path) {
    const nlohmann::json hdr = nn::read_checkpoint_header_file(path);
    if (hdr.value("kind", "") != "foresight_mlp")
      throw std::runtime_error("not a foresight checkpoint: " + path);
    ForesightModel m(hdr.at("embed_width").get<std::size_t>(),
                     hdr.at("hidden").get<std::size_t>());
    m.log1p_targets = hdr.at("log1p_targets").get<bool>();
    auto p = m.params();
    nn::load_checkpoint_file(path, p);
    return m;
  }
};

// Deterministic single forward pass, mapped back to uncertainty units when
// the model was trained on log1p-transformed targets.
inline double predict_uncertainty(const ForesightModel& model,
                                  const std::vector<double>& e,
                                  const std::vector<double>& a) {
  ForesightModel::Cache cache;
  const double raw = model.forward(e, a, cache);
  return model.log1p_targets ? std::expm1(raw) : raw;
}

// Exploration rollouts for distillation: every tick executes ONE stochastic
// sample (not the MC mean), and the recorded target is the uncertainty the
// next tick's MC sampling reports. The final tick of an episode emits no
// sample. Fully deterministic given (policy, seed).
inline ForesightDataset collect_distillation_data(const policy::PolicyModel& model,
                                                  env::Task task, std::size_t n_episodes,
                                                  std::uint64_t seed, std::size_t horizon,
                                                  std::size_t mc_samples = unc::kDefaultSamples) {
  if (n_episodes == 0)
    throw std::invalid_argument("collect_distillation_data: need at least one episode");
  ForesightDataset ds;
  ds.header.mc_samples = mc_samples;
  ds.header.lambda = model.cfg.lambda;
  ds.header.count = n_episodes;
  for (std::size_t ep = 0; ep < n_episodes; ++ep) {
    const std::uint64_t scene_seed = derive_seed(seed, 0x65787063, ep);
    const std::uint64_t noise_root = derive_seed(seed, 0x6578706e, ep);
    env::EnvState state = env::reset(task, scene_seed);
    policy::FrameBuffer buf(model.cfg.frame_buffer);
    nn::LstmMemory mem = model.fresh_memory();
    bool have_pending = false;
    ForesightSample pending;
    for (std::size_t t = 0; t < horizon; ++t) {
      buf.push(env::observe(state, model.cfg.obs_mode));
      nn::LstmMemory next;
      const unc::McResult mc = unc::mc_sample(model, buf.view(), env::proprio_of(state),
                                              mem, next, mc_samples, noise_root, t);
      mem = next;
      const double u = unc::uncertainty_from_samples(mc.set, model.cfg.lambda);
      if (have_pending) {
        pending.target = u;
        ds.samples.push_back(pending);
      }
      // one extra stochastic pass is the executed (exploring) action
      Rng exec_noise(derive_seed(noise_root, 0x65786563, t));
      policy::StepCache cache;
      const policy::HeadOutputs h = model.stack_pass(mc.e, true, &exec_noise, cache);
      unc::ActionSampleSet one;
      one.samples.push_back(h);
      const env::ActionCommand cmd = unc::mean_action(one);

      pending = ForesightSample{ep, t, mc.e.e, action_features(h), 0.0};
      have_pending = true;

      state = env::step(state, cmd);
      if (env::task_success(state)) break;
    }
  }
  return ds;
}

struct ForesightTrainResult {
  std::vector<double> train_curve;  // per-epoch mean train MSE (model space)
  double held_out_mse = 0.0;        // in uncertainty units
  double r_squared = 0.0;
  std::size_t n_train = 0, n_val = 0;
};

struct ForesightTrainOptions {
  std::size_t epochs = 300;
  std::size_t batch = 128;
  double learning_rate = 1e-3;
  double skew_limit = 5.0;  // log1p-transform targets beyond this skew
};

inline double sample_skew(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mu = 0.0;
  for (double x : xs) mu += x / n;
  double m2 = 0.0, m3 = 0.0;
  for (double x : xs) {
    const double d = x - mu;
    m2 += d * d / n;
    m3 += d * d * d / n;
  }
  if (m2 <= 0.0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

// MSE regression of next-tick uncertainty with an 80/20 split. Heavy-tailed
// targets (skew beyond the limit) are fit in log1p space; predictions are
// mapped back, so reported held-out metrics are always in uncertainty units.
inline ForesightTrainResult train_foresight(ForesightModel& model, ForesightDataset& ds,
                                            const ForesightTrainOptions& opt,
                                            std::uint64_t seed) {
  if (ds.samples.size() < 100)
    throw std::invalid_argument("train_foresight: need at least 100 samples");
  for (const auto& s : ds.samples)
    if (!(s.target >= 0.0) || !std::isfinite(s.target))
      throw std::invalid_argument("train_foresight: targets must be finite and >= 0");

  std::vector<double> raw_targets;
  for (const auto& s : ds.samples) raw_targets.push_back(s.target);
  const bool use_log1p = sample_skew(raw_targets) > opt.skew_limit;
  model.log1p_targets = use_log1p;
  ds.header.log1p_targets = use_log1p;

  std::vector<std::size_t> order(ds.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(seed, 0x73706c74));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[split_rng.uniform_int(i)]);
  const std::size_t n_train = (ds.samples.size() * 4) / 5;

  model.init(seed);
  nn::OptimizerState optst;
  optst.lr = opt.learning_rate;
  auto params = model.params();

  ForesightTrainResult res;
  res.n_train = n_train;
  res.n_val = ds.samples.size() - n_train;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuf(derive_seed(seed, 0x66737566, epoch));
    std::vector<std::size_t> idx(order.begin(), order.begin() + n_train);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[shuf.uniform_int(i)]);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += opt.batch) {
      const std::size_t bn = std::min(opt.batch, idx.size() - b0);
      model.zero_grad();
      for (std::size_t j = 0; j < bn; ++j) {
        const auto& s = ds.samples[idx[b0 + j]];
        ForesightModel::Cache cache;
        const double pred = model.forward(s.e, s.action, cache);
        const double tgt = use_log1p ? std::log1p(s.target) : s.target;
        const double diff = pred - tgt;
        loss_sum += diff * diff;
        model.backward(cache, 2.0 * diff / static_cast<double>(bn));
      }
      optst.step(params);
    }
    const double epoch_loss = loss_sum / static_cast<double>(n_train);
    if (!std::isfinite(epoch_loss))
      throw std::runtime_error("train_foresight: loss diverged at epoch " +
                               std::to_string(epoch));
    res.train_curve.push_back(epoch_loss);
  }

  // held-out metrics in uncertainty units
  double mu = 0.0;
  for (std::size_t i = n_train; i < order.size(); ++i)
    mu += ds.samples[order[i]].target / static_cast<double>(res.n_val);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = n_train; i < order.size(); ++i) {
    const auto& s = ds.samples[order[i]];
    const double pred = predict_uncertainty(model, s.e, s.action);
    ss_res += (pred - s.target) * (pred - s.target);
    ss_tot += (s.target - mu) * (s.target - mu);
  }
  res.held_out_mse = res.n_val ? ss_res / static_cast<double>(res.n_val) : 0.0;
  res.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  return res;
}

struct MinUncertaintyChoice {
  env::ActionCommand action;
  std::size_t index = 0;     // chosen sample index
  double score = 0.0;        // predicted next-tick uncertainty
  double uncertainty = 0.0;  // measured spread of the candidate set (0 if S < 2)
  policy::HeadOutputs sample;
};

// Scores each MC candidate with the foresight model and picks the one whose
// predicted next-tick uncertainty is lowest (lowest sample index on ties).
inline MinUncertaintyChoice min_uncertainty_action(const policy::PolicyModel& model,
                                                   const ForesightModel& fs,
                                                   const std::vector<const env::Observation*>& obs_buffer,
                                                   const env::ProprioState& proprio,
                                                   const nn::LstmMemory& mem,
                                                   nn::LstmMemory& mem_out, std::size_t s,
                                                   std::uint64_t noise_root,
                                                   std::uint64_t tick) {
  if (s < 1) throw std::invalid_argument("min_uncertainty_action: need at least one sample");
  const unc::McResult mc =
      unc::mc_sample(model, obs_buffer, proprio, mem, mem_out, s, noise_root, tick);
  MinUncertaintyChoice best;
  if (s >= 2)
    best.uncertainty = unc::uncertainty_from_samples(mc.set, model.cfg.lambda);
  for (std::size_t i = 0; i < mc.set.samples.size(); ++i) {
    const double score =
        predict_uncertainty(fs, mc.e.e, action_features(mc.set.samples[i]));
    if (i == 0 || score < best.score) {
      best.index = i;
      best.score = score;
      best.sample = mc.set.samples[i];
    }
  }
  unc::ActionSampleSet one;
  one.samples.push_back(best.sample);
  best.action = unc::mean_action(one);
  return best;
}

// line-delimited on-disk form: one JSON header line, one line per sample
inline void save_foresight_dataset(const ForesightDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  nlohmann::json hdr = {{"policy_checksum", ds.header.policy_checksum},
                        {"mc_samples", ds.header.mc_samples},
                        {"lambda", ds.header.lambda},
                        {"count", ds.header.count},
                        {"log1p_targets", ds.header.log1p_targets},
                        {"samples", ds.samples.size()}};
  out << hdr.dump() << "\n";
  char buf[32];
  for (const auto& s : ds.samples) {
    std::string line = "{\"e\":" + std::to_string(s.episode_id) +
                       ",\"t\":" + std::to_string(s.tick) + ",\"emb\":[";
    for (std::size_t i = 0; i < s.e.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", s.e[i]);
      line += buf;
      if (i + 1 < s.e.size()) line += ',';
    }
    line += "],\"act\":[";
    for (std::size_t i = 0; i < s.action.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", s.action[i]);
      line += buf;
      if (i + 1 < s.action.size()) line += ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", s.target);
    line += std::string("],\"target\":") + buf + "}";
    out << line << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline ForesightDataset load_foresight_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty foresight dataset: " + path);
  const nlohmann::json hdr = nlohmann::json::parse(line);
  ForesightDataset ds;
  ds.header.policy_checksum = hdr.at("policy_checksum").get<std::string>();
  ds.header.mc_samples = hdr.at("mc_samples").get<std::size_t>();
  ds.header.lambda = hdr.at("lambda").get<double>();
  ds.header.count = hdr.at("count").get<std::size_t>();
  ds.header.log1p_targets = hdr.at("log1p_targets").get<bool>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ForesightSample s;
    s.episode_id = j.at("e").get<std::uint64_t>();
    s.tick = j.at("t").get<std::uint64_t>();
    s.e = j.at("emb").get<std::vector<double>>();
    s.action = j.at("act").get<std::vector<double>>();
    s.target = j.at("target").get<double>();
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != hdr.at("samples").get<std::size_t>())
    throw std::runtime_error("foresight dataset truncated: " + path);
  return ds;
}

}  // namespace ivmc::foresight
