#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ivmc/common.hpp"
#include "ivmc/env/dataset.hpp"
#include "ivmc/env/env.hpp"
#include "ivmc/nn/checkpoint.hpp"
#include "ivmc/nn/layers.hpp"
#include "ivmc/nn/losses.hpp"
#include "ivmc/nn/optimizer.hpp"

namespace ivmc::policy {

struct PolicyConfig {
  env::ObsMode obs_mode = env::ObsMode::GridImage;
  std::size_t frame_buffer = 4;     // K
  std::size_t lstm_width = 64;
  std::size_t n_dropout_layers = 1; // number of dropout/fc pairs, 1 or 2
  std::size_t enc_out = 32;
  std::size_t proprio_tile = 4;
  double lambda = 0.3;              // norm/unit weighting for the calibration transform
  double dropout_init_p = 0.1;
  double dropout_temperature = 0.1;
  double length_scale = 1e-2;       // weight_reg = length_scale^2 (per-sample, pre /N)
  // The velocity head works in units of the max step so its targets are O(1)
  // like the auxiliary position targets; outputs are scaled back on the way
  // out. With raw metre units the equally weighted loss all but ignores the
  // velocity term ((2e-2)^2 against position errors of order 1e-1).
  double action_scale = env::kMaxStep;

  std::size_t proprio_dim() const { return 4; }
  std::size_t state_dim() const { return enc_out + proprio_dim() * proprio_tile; }

  void validate() const {
    if (n_dropout_layers < 1 || n_dropout_layers > 2)
      throw std::invalid_argument("PolicyConfig: n_dropout_layers must be 1 or 2");
    if (frame_buffer == 0) throw std::invalid_argument("PolicyConfig: frame_buffer must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"obs_mode", obs_mode == env::ObsMode::GridImage ? "grid" : "oracle"},
            {"K", frame_buffer},
            {"lstm_width", lstm_width},
            {"n_dropout_layers", n_dropout_layers},
            {"enc_out", enc_out},
            {"proprio_tile", proprio_tile},
            {"lambda", lambda},
            {"dropout_init_p", dropout_init_p},
            {"dropout_temperature", dropout_temperature},
            {"length_scale", length_scale},
            {"action_scale", action_scale}};
  }

  static PolicyConfig from_json(const nlohmann::json& j) {
    PolicyConfig c;
    c.obs_mode = j.at("obs_mode").get<std::string>() == "grid" ? env::ObsMode::GridImage
                                                               : env::ObsMode::OracleState;
    c.frame_buffer = j.at("K").get<std::size_t>();
    c.lstm_width = j.at("lstm_width").get<std::size_t>();
    c.n_dropout_layers = j.at("n_dropout_layers").get<std::size_t>();
    c.enc_out = j.at("enc_out").get<std::size_t>();
    c.proprio_tile = j.at("proprio_tile").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.dropout_init_p = j.at("dropout_init_p").get<double>();
    c.dropout_temperature = j.at("dropout_temperature").get<double>();
    c.length_scale = j.at("length_scale").get<double>();
    c.action_scale = j.value("action_scale", env::kMaxStep);
    return c;
  }
};

struct StateRep {
  std::vector<double> s;
};

struct Embedding {
  std::vector<double> e;
};

struct HeadOutputs {
  std::vector<double> delta_ee;    // 3
  std::vector<double> grp_logits;  // 3
  std::vector<double> q_obj;       // 3
  std::vector<double> q_ee;        // 3

  env::Vec3 delta_vec() const { return {delta_ee[0], delta_ee[1], delta_ee[2]}; }
};

using nn::LstmMemory;

struct StepCache {
  nn::Conv2dCache c1, c2;
  std::vector<double> conv1_out, conv2_out;
  nn::DenseCache enc;
  std::vector<double> s;
  nn::LstmCache lstm;
  std::vector<nn::ConcreteDropoutCache> dropc;
  std::vector<nn::DenseCache> fcc;
  nn::DenseCache hd, hg, ho, he;
};

// The Bayesian visuomotor control network: observation encoder, LSTM with
// persistent memory, interleaved concrete-dropout/dense stack, four heads.
class PolicyModel {
 public:
  PolicyConfig cfg;
  // grid encoder (unused in oracle mode)
  nn::Conv2dLayer conv1, conv2;
  nn::DenseLayer enc_dense;
  nn::LstmCell lstm;
  struct StackBlock {
    nn::ConcreteDropoutLayer drop;
    nn::DenseLayer fc;
  };
  std::vector<StackBlock> stack;
  nn::DenseLayer head_delta, head_grp, head_qobj, head_qee;

  explicit PolicyModel(const PolicyConfig& config) : cfg(config) {
    cfg.validate();
    const std::size_t k = cfg.frame_buffer;
    if (cfg.obs_mode == env::ObsMode::GridImage) {
      conv1 = nn::Conv2dLayer(k * env::kGridChannels, 8, env::kGridSize, env::kGridSize,
                              nn::Activation::Relu);
      conv2 = nn::Conv2dLayer(8, 16, conv1.hout, conv1.wout, nn::Activation::Relu);
      enc_dense = nn::DenseLayer(conv2.out_size(), cfg.enc_out, nn::Activation::Tanh);
    } else {
      enc_dense = nn::DenseLayer(k * env::observation_dim(env::ObsMode::OracleState),
                                 cfg.enc_out, nn::Activation::Tanh);
    }
    lstm = nn::LstmCell(cfg.state_dim(), cfg.lstm_width);
    const double wreg = cfg.length_scale * cfg.length_scale;
    for (std::size_t i = 0; i < cfg.n_dropout_layers; ++i) {
      StackBlock blk;
      blk.drop = nn::ConcreteDropoutLayer(cfg.lstm_width, cfg.dropout_init_p,
                                          cfg.dropout_temperature, wreg, 2.0);
      blk.fc = nn::DenseLayer(cfg.lstm_width, cfg.lstm_width, nn::Activation::Tanh);
      stack.push_back(std::move(blk));
    }
    head_delta = nn::DenseLayer(cfg.lstm_width, 3, nn::Activation::Identity);
    head_grp = nn::DenseLayer(cfg.lstm_width, 3, nn::Activation::Identity);
    head_qobj = nn::DenseLayer(cfg.lstm_width, 3, nn::Activation::Identity);
    head_qee = nn::DenseLayer(cfg.lstm_width, 3, nn::Activation::Identity);
  }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x696e6974));
    if (cfg.obs_mode == env::ObsMode::GridImage) {
      conv1.init(rng);
      conv2.init(rng);
    }
    enc_dense.init(rng);
    lstm.init(rng);
    for (auto& blk : stack) blk.fc.init(rng);
    head_delta.init(rng);
    head_grp.init(rng);
    head_qobj.init(rng);
    head_qee.init(rng);
  }

  std::vector<nn::ParamView> params() {
    std::vector<nn::ParamView> out;
    auto add = [&](std::vector<nn::ParamView> v) {
      for (auto& p : v) out.push_back(p);
    };
    if (cfg.obs_mode == env::ObsMode::GridImage) {
      add(conv1.params("conv1"));
      add(conv2.params("conv2"));
    }
    add(enc_dense.params("enc_dense"));
    add(lstm.params("lstm"));
    for (std::size_t i = 0; i < stack.size(); ++i) {
      add(stack[i].drop.params("stack" + std::to_string(i) + ".drop"));
      add(stack[i].fc.params("stack" + std::to_string(i) + ".fc"));
    }
    add(head_delta.params("head_delta"));
    add(head_grp.params("head_grp"));
    add(head_qobj.params("head_qobj"));
    add(head_qee.params("head_qee"));
    return out;
  }

  void zero_grad() {
    if (cfg.obs_mode == env::ObsMode::GridImage) {
      conv1.zero_grad();
      conv2.zero_grad();
    }
    enc_dense.zero_grad();
    lstm.zero_grad();
    for (auto& blk : stack) {
      blk.drop.zero_grad();
      blk.fc.zero_grad();
    }
    head_delta.zero_grad();
    head_grp.zero_grad();
    head_qobj.zero_grad();
    head_qee.zero_grad();
  }

  LstmMemory fresh_memory() const { return LstmMemory(cfg.lstm_width); }

  nlohmann::json arch() const {
    nlohmann::json j = cfg.to_json();
    j["kind"] = "policy_bvmc";
    return j;
  }

  void save(const std::string& path) {
    nn::save_checkpoint_file(path, arch(), params());
  }

  static PolicyModel load(const std::string& path) {
    const nlohmann::json hdr = nn::read_checkpoint_header_file(path);
    if (hdr.value("kind", "") != "policy_bvmc")
      throw std::runtime_error("not a policy checkpoint: " + path);
    PolicyModel m(PolicyConfig::from_json(hdr));
    auto p = m.params();
    nn::load_checkpoint_file(path, p);
    return m;
  }

  // --- forward pieces -------------------------------------------------

  // Stacks the K buffered frames channel-wise and concatenates the tiled
  // proprio feature. Buffer runs oldest-first and must hold exactly K frames.
  StateRep encode(const std::vector<const env::Observation*>& obs_buffer,
                  const env::ProprioState& proprio, StepCache& cache) const {
    const std::size_t k = cfg.frame_buffer;
    if (obs_buffer.size() != k)
      throw std::invalid_argument("encode: frame buffer must hold exactly K frames");
    const std::size_t frame_dim = env::observation_dim(cfg.obs_mode);
    std::vector<double> stacked(k * frame_dim);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& flat = obs_buffer[i]->flat();
      if (flat.size() != frame_dim) throw std::invalid_argument("encode: bad frame size");
      std::copy(flat.begin(), flat.end(), stacked.begin() + i * frame_dim);
    }
    if (cfg.obs_mode == env::ObsMode::GridImage) {
      conv1.forward(stacked, cache.c1, cache.conv1_out);
      conv2.forward(cache.conv1_out, cache.c2, cache.conv2_out);
      enc_dense.forward(cache.conv2_out, cache.enc);
    } else {
      enc_dense.forward(stacked, cache.enc);
    }
    StateRep rep;
    rep.s = cache.enc.y;
    const double pr[4] = {proprio.ee_pos.x, proprio.ee_pos.y, proprio.ee_pos.z,
                          proprio.gripper_open};
    for (std::size_t t = 0; t < cfg.proprio_tile; ++t)
      for (double v : pr) rep.s.push_back(v);
    cache.s = rep.s;
    return rep;
  }

  // LSTM advance; returns the embedding e_t and the updated memory.
  Embedding lstm_advance(const StateRep& s, const LstmMemory& mem, StepCache& cache,
                         LstmMemory& mem_out) const {
    lstm.step(s.s, mem, cache.lstm, mem_out);
    return Embedding{cache.lstm.h_new};
  }

  // Dropout/fc stack plus heads. In stochastic mode fresh concrete noise is
  // drawn from `noise`; deterministic mode evaluates gates at expectation.
  HeadOutputs stack_pass(const Embedding& e, bool stochastic, Rng* noise,
                         StepCache& cache) const {
    cache.dropc.resize(stack.size());
    cache.fcc.resize(stack.size());
    std::vector<double> cur = e.e;
    for (std::size_t i = 0; i < stack.size(); ++i) {
      std::vector<double> u;
      if (stochastic) {
        if (noise == nullptr)
          throw std::invalid_argument("stack_pass: stochastic pass needs a noise stream");
        u.resize(stack[i].drop.width);
        for (auto& v : u) v = noise->uniform_open();
      }
      std::vector<double> dropped;
      stack[i].drop.forward(cur, u, stochastic, cache.dropc[i], dropped);
      stack[i].fc.forward(dropped, cache.fcc[i]);
      cur = cache.fcc[i].y;
    }
    head_delta.forward(cur, cache.hd);
    head_grp.forward(cur, cache.hg);
    head_qobj.forward(cur, cache.ho);
    head_qee.forward(cur, cache.he);
    HeadOutputs out{cache.hd.y, cache.hg.y, cache.ho.y, cache.he.y};
    for (auto& v : out.delta_ee) v *= cfg.action_scale;
    for (const auto* v : {&out.delta_ee, &out.grp_logits, &out.q_obj, &out.q_ee})
      if (!all_finite(*v))
        throw std::runtime_error("policy_step: non-finite activation in output heads");
    return out;
  }

  // Full step: encoder -> LSTM -> stack -> heads.
  HeadOutputs policy_step(const std::vector<const env::Observation*>& obs_buffer,
                          const env::ProprioState& proprio, const LstmMemory& mem,
                          Rng* noise, bool stochastic, Embedding& e_out,
                          LstmMemory& mem_out, StepCache& cache) const {
    const StateRep s = encode(obs_buffer, proprio, cache);
    e_out = lstm_advance(s, mem, cache, mem_out);
    return stack_pass(e_out, stochastic, noise, cache);
  }

  // Backward through stack and heads only; returns the embedding gradient.
  void stack_backward(const StepCache& cache, const nn::HeadPrediction& head_grads,
                      std::vector<double>& de) {
    std::vector<double> dcur(cfg.lstm_width, 0.0), tmp;
    head_delta.backward(cache.hd, head_grads.delta_ee, tmp);
    axpy(1.0, tmp, dcur);
    head_grp.backward(cache.hg, head_grads.grp_logits, tmp);
    axpy(1.0, tmp, dcur);
    head_qobj.backward(cache.ho, head_grads.q_obj, tmp);
    axpy(1.0, tmp, dcur);
    head_qee.backward(cache.he, head_grads.q_ee, tmp);
    axpy(1.0, tmp, dcur);
    for (std::size_t i = stack.size(); i-- > 0;) {
      std::vector<double> ddrop;
      stack[i].fc.backward(cache.fcc[i], dcur, ddrop);
      stack[i].drop.backward(cache.dropc[i], ddrop, dcur);
    }
    de = dcur;
  }

  // Backward through the encoder given the state-representation gradient.
  void encode_backward(const StepCache& cache, const std::vector<double>& ds) {
    std::vector<double> denc(cache.enc.y.size());
    std::copy(ds.begin(), ds.begin() + cfg.enc_out, denc.begin());
    // tiled proprio carries no trainable parameters
    std::vector<double> dflat, d1;
    enc_dense.backward(cache.enc, denc, dflat);
    if (cfg.obs_mode == env::ObsMode::GridImage) {
      conv2.backward(cache.c2, dflat, d1);
      std::vector<double> d0;
      conv1.backward(cache.c1, d1, d0);
    }
  }
};

// Sliding K-frame observation buffer, front-padded at episode start.
class FrameBuffer {
 public:
  explicit FrameBuffer(std::size_t k) : k_(k) {}

  void push(env::Observation obs) {
    if (frames_.empty()) frames_.assign(k_, obs);  // repeat the first frame
    else {
      frames_.pop_front();
      frames_.push_back(std::move(obs));
    }
  }

  void clear() { frames_.clear(); }

  // refills every slot with the given observation (used after backtracking)
  void refill(const env::Observation& obs) { frames_.assign(k_, obs); }

  bool empty() const { return frames_.empty(); }

  std::vector<const env::Observation*> view() const {
    std::vector<const env::Observation*> v;
    v.reserve(frames_.size());
    for (const auto& f : frames_) v.push_back(&f);
    return v;
  }

 private:
  std::size_t k_;
  std::deque<env::Observation> frames_;
};

struct TrainOptions {
  std::size_t epochs = 150;
  std::size_t batch_episodes = 8;
  double learning_rate = 1e-3;
  double val_fraction = 0.1;
  std::size_t workers = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<double> dropout_rates;
};

struct TrainResult {
  std::vector<EpochStats> curves;
  double final_val_loss = 0.0;
};

namespace detail {

inline nn::HeadTarget target_of(const env::StepTrace& st, double action_scale) {
  nn::HeadTarget t;
  t.delta_ee = {st.action.delta_ee.x / action_scale, st.action.delta_ee.y / action_scale,
                st.action.delta_ee.z / action_scale};
  t.grp_onehot = {0.0, 0.0, 0.0};
  switch (st.action.gripper) {
    case env::GripperCmd::Open: t.grp_onehot[0] = 1.0; break;
    case env::GripperCmd::Close: t.grp_onehot[1] = 1.0; break;
    case env::GripperCmd::NoOp: t.grp_onehot[2] = 1.0; break;
  }
  t.q_obj = {st.q_obj.x, st.q_obj.y, st.q_obj.z};
  t.q_ee = {st.q_ee.x, st.q_ee.y, st.q_ee.z};
  return t;
}

// Forward+backward over one full episode (truncated-nothing BPTT). Gradients
// are scaled by `grad_scale` per step; returns the summed step loss.
inline double episode_bptt(PolicyModel& model, const env::EpisodeRecord& episode,
                           bool stochastic, Rng* noise, double grad_scale,
                           bool do_backward) {
  const std::size_t n = episode.steps.size();
  std::vector<StepCache> caches(n);
  std::vector<nn::HeadTarget> targets(n);
  FrameBuffer buf(model.cfg.frame_buffer);
  LstmMemory mem = model.fresh_memory();
  double loss_sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto& st = episode.steps[t];
    buf.push(st.obs);
    Embedding e;
    LstmMemory next;
    const HeadOutputs out =
        model.policy_step(buf.view(), st.proprio, mem, noise, stochastic, e, next, caches[t]);
    mem = next;
    targets[t] = target_of(st, model.cfg.action_scale);
    // loss reads the raw (unit-scale) velocity head, matching the target units
    nn::HeadPrediction pred{caches[t].hd.y, out.grp_logits, out.q_obj, out.q_ee};
    loss_sum += nn::loss_eq1(pred, targets[t]);
  }
  if (!do_backward) return loss_sum;

  std::vector<double> dh(model.cfg.lstm_width, 0.0), dc(model.cfg.lstm_width, 0.0);
  for (std::size_t t = n; t-- > 0;) {
    nn::HeadPrediction pred{caches[t].hd.y, caches[t].hg.y, caches[t].ho.y, caches[t].he.y};
    nn::HeadPrediction hg;
    nn::loss_eq1_backward(pred, targets[t], grad_scale, hg);
    std::vector<double> de;
    model.stack_backward(caches[t], hg, de);
    axpy(1.0, de, dh);  // embedding gradient joins the recurrent hidden gradient
    std::vector<double> ds, dh_prev, dc_prev;
    model.lstm.backward(caches[t].lstm, dh, dc, ds, dh_prev, dc_prev);
    dh = dh_prev;
    dc = dc_prev;
    model.encode_backward(caches[t], ds);
  }
  return loss_sum;
}

}  // namespace detail

// Behavioural cloning under the four-head loss with full-episode BPTT and
// per-batch concrete-dropout regularization. Deterministic given seed, and
// byte-identical for any worker count.
inline TrainResult train_policy(PolicyModel& model, const env::DemoDataset& dataset,
                                const TrainOptions& opt, std::uint64_t seed) {
  if (dataset.records.empty()) throw std::invalid_argument("train_policy: empty dataset");
  if (dataset.header.obs_mode != model.cfg.obs_mode)
    throw std::invalid_argument("train_policy: dataset observation mode mismatch");
  for (const auto& rec : dataset.records)
    for (const auto& st : rec.steps)
      if (st.obs.flat().size() != env::observation_dim(model.cfg.obs_mode))
        throw std::invalid_argument("train_policy: dataset record missing targets/observation");

  model.init(seed);
  const std::size_t n_total = dataset.records.size();
  std::size_t n_val = static_cast<std::size_t>(std::floor(opt.val_fraction * n_total));
  if (n_val >= n_total) n_val = n_total - 1;
  const std::size_t n_train = n_total - n_val;

  std::vector<std::size_t> train_idx(n_train), val_idx(n_val);
  for (std::size_t i = 0; i < n_train; ++i) train_idx[i] = i;
  for (std::size_t i = 0; i < n_val; ++i) val_idx[i] = n_train + i;

  std::size_t total_steps = 0;
  for (std::size_t i : train_idx) total_steps += dataset.records[i].steps.size();

  nn::OptimizerState optst;
  optst.lr = opt.learning_rate;
  auto params = model.params();

  // One gradient accumulator per batch slot. Episodes are reduced in batch
  // order whatever the worker count, so results are byte-identical for any
  // --workers value.
  const std::size_t workers = std::max<std::size_t>(1, opt.workers);
  std::vector<std::unique_ptr<PolicyModel>> slot_models;
  for (std::size_t j = 0; j < opt.batch_episodes; ++j)
    slot_models.push_back(std::make_unique<PolicyModel>(model.cfg));

  TrainResult result;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, 0x73687566, epoch));
    std::vector<std::size_t> order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    double train_loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += opt.batch_episodes) {
      const std::size_t bn = std::min(opt.batch_episodes, order.size() - b0);
      std::size_t batch_steps = 0;
      for (std::size_t j = 0; j < bn; ++j)
        batch_steps += dataset.records[order[b0 + j]].steps.size();
      const double gscale = 1.0 / static_cast<double>(batch_steps);

      std::vector<double> losses(bn, 0.0);
      for (std::size_t j = 0; j < bn; ++j) {
        auto src = model.params();
        auto dst = slot_models[j]->params();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = *src[i].value;
        slot_models[j]->zero_grad();
      }
      auto run_slot = [&](std::size_t j) {
        const std::size_t ei = order[b0 + j];
        Rng noise(derive_seed(seed, 0x6e6f6973, epoch, ei));
        losses[j] = detail::episode_bptt(*slot_models[j], dataset.records[ei], true,
                                         &noise, gscale, true);
      };
      if (workers == 1 || bn == 1) {
        for (std::size_t j = 0; j < bn; ++j) run_slot(j);
      } else {
        const std::size_t nthreads = std::min(workers, bn);
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < nthreads; ++w)
          threads.emplace_back([&, w] {
            for (std::size_t j = w; j < bn; j += nthreads) run_slot(j);
          });
        for (auto& t : threads) t.join();
      }
      model.zero_grad();
      for (std::size_t j = 0; j < bn; ++j) {
        auto src = slot_models[j]->params();
        for (std::size_t i = 0; i < params.size(); ++i)
          axpy(1.0, *src[i].grad, *params[i].grad);
      }
      for (double l : losses) train_loss_sum += l;

      // concrete-dropout regularizers, once per optimizer step
      for (auto& blk : model.stack) {
        concrete_dropout_regularizer_backward(blk.drop, blk.fc, total_steps);
      }
      optst.step(params);
    }

    // validation loss with gates at expectation
    double val_loss_sum = 0.0;
    std::size_t val_steps = 0;
    for (std::size_t i : val_idx) {
      val_loss_sum += detail::episode_bptt(model, dataset.records[i], false, nullptr, 0.0, false);
      val_steps += dataset.records[i].steps.size();
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = train_loss_sum / static_cast<double>(total_steps);
    st.val_loss = val_steps ? val_loss_sum / static_cast<double>(val_steps) : st.train_loss;
    if (!std::isfinite(st.val_loss))
      throw std::runtime_error("train_policy: validation loss is NaN at epoch " +
                               std::to_string(epoch) + " (seed " + std::to_string(seed) + ")");
    for (const auto& blk : model.stack) st.dropout_rates.push_back(blk.drop.rate());
    result.curves.push_back(st);
  }
  result.final_val_loss = result.curves.empty() ? 0.0 : result.curves.back().val_loss;
  return result;
}

}  // namespace ivmc::policy
