#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ivmc/env/dataset.hpp"
#include "ivmc/env/env.hpp"
#include "ivmc/foresight/foresight.hpp"
#include "ivmc/harness/config.hpp"
#include "ivmc/harness/manifest.hpp"
#include "ivmc/policy/policy.hpp"
#include "ivmc/recovery/recovery.hpp"
#include "ivmc/uncertainty/uncertainty.hpp"

namespace ivmc::harness {

inline constexpr const char* kDemoFile = "demos.jsonl";
inline constexpr const char* kPolicyFile = "policy.ckpt";
inline constexpr const char* kCurvesFile = "train_curves.csv";
inline constexpr const char* kValRecordsFile = "validation_records.csv";
inline constexpr const char* kThresholdScanFile = "threshold_scan.csv";
inline constexpr const char* kThresholdFile = "threshold.json";
inline constexpr const char* kForesightDataFile = "foresight_data.jsonl";
inline constexpr const char* kForesightModelFile = "foresight.ckpt";
inline constexpr const char* kForesightTrainFile = "foresight_train.json";
inline constexpr const char* kResultsTableFile = "results_table.csv";
inline constexpr const char* kMcNemarFile = "mcnemar.csv";
inline constexpr const char* kRecoveryLogFile = "recovery_log.csv";
inline constexpr const char* kBinningEpisodesFile = "binning_episodes.csv";
inline constexpr const char* kBinningFile = "binning.csv";
inline constexpr const char* kReportFile = "report.txt";
inline constexpr const char* kResolvedConfigFile = "config_resolved.txt";

inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Standard error of a success percentage, in percentage points.
inline double se_percent(double p_hat, std::size_t n) {
  if (n == 0) throw std::invalid_argument("se_percent: n must be > 0");
  return 100.0 * std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n));
}

// Spearman rank correlation with average ranks on ties.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("spearman: need two equally sized series");
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Runs fn(i) for i in [0, n), possibly across threads. Each call must write
// only to its own output slot; aggregation afterwards walks slots in index
// order, so results do not depend on the worker count.
template <class Fn>
inline void parallel_for_indexed(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t w = std::min(workers, n);
  std::exception_ptr first_error;
  std::mutex err_mx;
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t)
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        std::scoped_lock lk(err_mx);
        if (!first_error) first_error = std::current_exception();
      }
    });
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline void ensure_out_dir(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  std::ofstream out(cfg.out + "/" + kResolvedConfigFile, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write into output directory " + cfg.out);
  out << cfg.to_text();
}

// ---------------------------------------------------------------------------
// Stage: demonstration generation
// ---------------------------------------------------------------------------

inline env::DemoDataset cmd_gen_demos(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  auto ds = env::generate_demos(cfg.task_enum(), cfg.demos, cfg.seed,
                                cfg.obs_mode_enum(), cfg.horizon, cfg.demo_noise);
  env::save_demo_dataset(ds, cfg.out + "/" + kDemoFile);
  Manifest m = Manifest::load(cfg.out);
  m.record(cfg.out, "demos", cfg.seed, {}, {kDemoFile});
  m.save(cfg.out);
  return ds;
}

// ---------------------------------------------------------------------------
// Stage: behavioural-cloning training
// ---------------------------------------------------------------------------

inline policy::TrainResult cmd_train(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Manifest m = Manifest::load(cfg.out);
  m.verify(cfg.out, kDemoFile);
  const auto ds = env::load_demo_dataset(cfg.out + "/" + kDemoFile);

  policy::PolicyModel model(cfg.policy_config());
  policy::TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch_episodes = cfg.batch_episodes;
  opt.learning_rate = cfg.learning_rate;
  opt.val_fraction = cfg.val_fraction;
  opt.workers = cfg.workers;
  const auto res = policy::train_policy(model, ds, opt, cfg.seed);

  model.save(cfg.out + "/" + kPolicyFile);
  std::ofstream csv(cfg.out + "/" + kCurvesFile, std::ios::binary);
  csv << "epoch,train_loss,val_loss";
  for (std::size_t i = 0; i < model.cfg.n_dropout_layers; ++i) csv << ",dropout_rate_" << i;
  csv << "\n";
  for (const auto& ep : res.curves) {
    csv << ep.epoch << "," << fmt_g17(ep.train_loss) << "," << fmt_g17(ep.val_loss);
    for (double p : ep.dropout_rates) csv << "," << fmt_g17(p);
    csv << "\n";
  }
  csv.close();

  m.record(cfg.out, "train", cfg.seed, {kDemoFile}, {kPolicyFile, kCurvesFile});
  m.save(cfg.out);
  return res;
}

// ---------------------------------------------------------------------------
// Stage: failure-detection threshold calibration
// ---------------------------------------------------------------------------

inline unc::ThresholdResult cmd_pick_threshold(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Manifest m = Manifest::load(cfg.out);
  m.verify(cfg.out, kPolicyFile);
  const auto model = policy::PolicyModel::load(cfg.out + "/" + kPolicyFile);
  if (cfg.n_val < 2)
    throw std::invalid_argument("pick-threshold: n_val must be at least 2");

  std::vector<unc::ValidationRecord> records(cfg.n_val);
  parallel_for_indexed(cfg.n_val, cfg.workers, [&](std::size_t i) {
    const std::uint64_t scene_seed = derive_seed(cfg.seed, 0x76616c73, i);
    const std::uint64_t noise_root = derive_seed(cfg.seed, 0x76616c6e, i);
    const auto res = recovery::rollout_bvmc(model, cfg.task_enum(), cfg.mc_samples,
                                            cfg.max_steps(), scene_seed, noise_root, i);
    records[i] = {i, res.record.max_window_sum, res.record.stage_flags.task};
  });

  {
    std::ofstream csv(cfg.out + "/" + kValRecordsFile, std::ios::binary);
    csv << "episode_id,max_window_sum,success\n";
    for (const auto& r : records)
      csv << r.episode_id << "," << fmt_g17(r.max_u) << "," << (r.success ? 1 : 0) << "\n";
  }

  const auto th = unc::pick_threshold(records);
  {
    std::ofstream csv(cfg.out + "/" + kThresholdScanFile, std::ios::binary);
    csv << "index,candidate_u,objective\n";
    for (std::size_t i = 0; i < th.sorted_u.size(); ++i)
      csv << (i + 1) << "," << fmt_g17(th.sorted_u[i]) << ","
          << fmt_g17(th.objectives[i]) << "\n";
  }
  {
    nlohmann::json j;
    j["threshold"] = std::isfinite(th.threshold) ? nlohmann::json(th.threshold)
                                                 : nlohmann::json(nullptr);
    j["i_star"] = th.i_star;
    j["r_bar"] = th.r_bar;
    j["degenerate"] = th.degenerate;
    j["n_records"] = records.size();
    std::ofstream out(cfg.out + "/" + kThresholdFile, std::ios::binary);
    out << j.dump(2) << "\n";
  }

  m.record(cfg.out, "threshold", cfg.seed, {kPolicyFile},
           {kValRecordsFile, kThresholdScanFile, kThresholdFile});
  m.save(cfg.out);
  return th;
}

inline double load_threshold(const std::string& dir) {
  std::ifstream in(dir + "/" + kThresholdFile, std::ios::binary);
  if (!in) throw std::runtime_error("missing threshold file in " + dir);
  nlohmann::json j;
  in >> j;
  if (j["threshold"].is_null()) return std::numeric_limits<double>::infinity();
  return j["threshold"].get<double>();
}

// ---------------------------------------------------------------------------
// Stage: foresight distillation data and training
// ---------------------------------------------------------------------------

inline foresight::ForesightDataset cmd_collect_foresight(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Manifest m = Manifest::load(cfg.out);
  m.verify(cfg.out, kPolicyFile);
  const auto model = policy::PolicyModel::load(cfg.out + "/" + kPolicyFile);

  // episodes are independent, so collect them in parallel-safe slots
  std::vector<foresight::ForesightDataset> parts(cfg.foresight_episodes);
  parallel_for_indexed(cfg.foresight_episodes, cfg.workers, [&](std::size_t ep) {
    parts[ep] = foresight::collect_distillation_data(
        model, cfg.task_enum(), 1, derive_seed(cfg.seed, 0x66736570, ep), cfg.horizon,
        cfg.foresight_mc_samples);
    for (auto& s : parts[ep].samples) s.episode_id = ep;
  });
  foresight::ForesightDataset ds;
  ds.header.mc_samples = cfg.foresight_mc_samples;
  ds.header.lambda = model.cfg.lambda;
  ds.header.count = cfg.foresight_episodes;
  ds.header.policy_checksum = m.output_checksum(kPolicyFile);
  for (auto& p : parts)
    for (auto& s : p.samples) ds.samples.push_back(std::move(s));

  foresight::save_foresight_dataset(ds, cfg.out + "/" + kForesightDataFile);
  m.record(cfg.out, "foresight_data", cfg.seed, {kPolicyFile}, {kForesightDataFile});
  m.save(cfg.out);
  return ds;
}

inline foresight::ForesightTrainResult cmd_train_foresight(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Manifest m = Manifest::load(cfg.out);
  m.verify(cfg.out, kForesightDataFile);
  auto ds = foresight::load_foresight_dataset(cfg.out + "/" + kForesightDataFile);
  if (ds.header.policy_checksum != m.output_checksum(kPolicyFile))
    throw std::runtime_error(
        "train-foresight: dataset was distilled from a different policy "
        "checkpoint; rerun collect-foresight");

  foresight::ForesightModel model;
  foresight::ForesightTrainOptions opt;
  opt.epochs = cfg.foresight_epochs;
  opt.batch = cfg.foresight_batch;
  opt.learning_rate = cfg.foresight_lr;
  const auto res = foresight::train_foresight(model, ds, opt, cfg.seed);

  model.save(cfg.out + "/" + kForesightModelFile);
  {
    nlohmann::json j = {{"r_squared", res.r_squared},
                        {"held_out_mse", res.held_out_mse},
                        {"n_train", res.n_train},
                        {"n_val", res.n_val},
                        {"log1p_targets", ds.header.log1p_targets}};
    std::ofstream out(cfg.out + "/" + kForesightTrainFile, std::ios::binary);
    out << j.dump(2) << "\n";
  }
  m.record(cfg.out, "foresight_train", cfg.seed, {kForesightDataFile},
           {kForesightModelFile, kForesightTrainFile});
  m.save(cfg.out);
  return res;
}

// ---------------------------------------------------------------------------
// Stage: evaluation
// ---------------------------------------------------------------------------

struct EpisodeSummary {
  std::uint64_t episode_id = 0;
  std::uint64_t scene_seed = 0;
  std::uint64_t terminal_tick = 0;
  double max_u = 0.0;
  bool reach = false, pick = false, task = false;
  std::size_t n_recoveries = 0;
};

struct ModeResult {
  std::string mode;
  std::vector<EpisodeSummary> episodes;
  std::vector<recovery::RecoveryEvent> events;

  std::size_t count(bool EpisodeSummary::* flag) const {
    std::size_t c = 0;
    for (const auto& e : episodes) c += (e.*flag) ? 1 : 0;
    return c;
  }
  double rate(bool EpisodeSummary::* flag) const {
    return static_cast<double>(count(flag)) / static_cast<double>(episodes.size());
  }
};

struct EvalReport {
  std::vector<ModeResult> modes;
  std::vector<EpisodeSummary> binning;  // plain rollouts used for calibration bins
};

// Deterministic single-pass rollout: expectation-mode gates, no sampling, no
// uncertainty monitoring.
inline env::EpisodeRecord run_deterministic_episode(const policy::PolicyModel& model,
                                                    env::Task task, std::size_t max_steps,
                                                    std::uint64_t scene_seed,
                                                    std::uint64_t episode_id) {
  env::EnvState state = env::reset(task, scene_seed);
  policy::FrameBuffer buf(model.cfg.frame_buffer);
  nn::LstmMemory mem = model.fresh_memory();
  env::EpisodeRecord rec;
  rec.episode_id = episode_id;
  rec.task = task;
  rec.scene_seed = scene_seed;
  rec.obs_mode = model.cfg.obs_mode;
  std::uint64_t tick = 0;
  while (tick < max_steps && !env::task_success(state)) {
    const env::Observation obs = env::observe(state, model.cfg.obs_mode);
    buf.push(obs);
    policy::StepCache cache;
    policy::Embedding e;
    nn::LstmMemory next;
    const auto out = model.policy_step(buf.view(), env::proprio_of(state), mem, nullptr,
                                       false, e, next, cache);
    mem = next;
    std::size_t g = 0;
    for (std::size_t i = 1; i < out.grp_logits.size(); ++i)
      if (out.grp_logits[i] > out.grp_logits[g]) g = i;
    const env::ActionCommand cmd{{out.delta_ee[0], out.delta_ee[1], out.delta_ee[2]},
                                 static_cast<env::GripperCmd>(g)};
    const env::EnvState before = state;
    state = env::step(state, cmd);
    env::StepTrace st;
    st.obs = obs;
    st.proprio = env::proprio_of(before);
    st.action = cmd;
    st.applied_delta = state.ee_pos - before.ee_pos;
    st.state_before = before;
    rec.steps.push_back(st);
    ++tick;
  }
  rec.final_state = state;
  rec.terminal_tick = tick;
  rec.stage_flags = env::success_metrics(rec);
  return rec;
}

inline EpisodeSummary summarize(const env::EpisodeRecord& rec, std::size_t n_recoveries) {
  EpisodeSummary s;
  s.episode_id = rec.episode_id;
  s.scene_seed = rec.scene_seed;
  s.terminal_tick = rec.terminal_tick;
  s.max_u = rec.max_window_sum;
  s.reach = rec.stage_flags.reach;
  s.pick = rec.stage_flags.pick;
  s.task = rec.stage_flags.task;
  s.n_recoveries = n_recoveries;
  return s;
}

inline EvalReport cmd_evaluate(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Manifest m = Manifest::load(cfg.out);
  m.verify(cfg.out, kPolicyFile);
  const auto model = policy::PolicyModel::load(cfg.out + "/" + kPolicyFile);
  const auto mode_names = cfg.mode_list();

  bool needs_threshold = false, needs_foresight = false;
  for (const auto& name : mode_names) {
    if (name != "vmc" && name != "none") needs_threshold = true;
    if (name == "min_unc") needs_foresight = true;
  }
  double threshold = std::numeric_limits<double>::infinity();
  if (needs_threshold) {
    m.verify(cfg.out, kThresholdFile);
    threshold = load_threshold(cfg.out);
  }
  foresight::ForesightModel fs;
  if (needs_foresight) {
    m.verify(cfg.out, kForesightModelFile);
    fs = foresight::ForesightModel::load(cfg.out + "/" + kForesightModelFile);
  }

  EvalReport report;
  // every mode sees the same scene seeds and the same noise roots, so the
  // comparison is paired scene by scene
  for (const auto& name : mode_names) {
    ModeResult mr;
    mr.mode = name;
    mr.episodes.resize(cfg.n_eval);
    std::vector<std::vector<recovery::RecoveryEvent>> events(cfg.n_eval);
    parallel_for_indexed(cfg.n_eval, cfg.workers, [&](std::size_t i) {
      const std::uint64_t scene_seed = derive_seed(cfg.seed, 0x6576736e, i);
      const std::uint64_t noise_root = derive_seed(cfg.seed, 0x65766e6f, i);
      if (name == "vmc") {
        const auto rec = run_deterministic_episode(model, cfg.task_enum(),
                                                   cfg.max_steps(), scene_seed, i);
        mr.episodes[i] = summarize(rec, 0);
      } else {
        const recovery::Mode mode = recovery::mode_from_name(name);
        const auto ccfg = cfg.controller_config(
            mode, mode == recovery::Mode::None
                      ? std::numeric_limits<double>::infinity()
                      : threshold);
        const auto res = recovery::run_episode(
            model, needs_foresight ? &fs : nullptr, cfg.task_enum(), ccfg, scene_seed,
            noise_root, i);
        mr.episodes[i] = summarize(res.record, res.events.size());
        events[i] = res.events;
      }
    });
    for (auto& ev : events)
      for (auto& e : ev) mr.events.push_back(e);
    report.modes.push_back(std::move(mr));
  }

  // calibration pool: plain rollouts on fresh scenes
  report.binning.resize(cfg.n_binning);
  parallel_for_indexed(cfg.n_binning, cfg.workers, [&](std::size_t i) {
    const std::uint64_t scene_seed = derive_seed(cfg.seed, 0x62696e73, i);
    const std::uint64_t noise_root = derive_seed(cfg.seed, 0x62696e6e, i);
    const auto res = recovery::rollout_bvmc(model, cfg.task_enum(), cfg.mc_samples,
                                            cfg.max_steps(), scene_seed, noise_root, i);
    report.binning[i] = summarize(res.record, 0);
  });

  auto write_episode_csv = [](const std::string& path,
                              const std::vector<EpisodeSummary>& eps) {
    std::ofstream csv(path, std::ios::binary);
    csv << "episode_id,scene_seed,terminal_tick,max_window_sum,reach,pick,task,"
           "n_recoveries\n";
    for (const auto& e : eps)
      csv << e.episode_id << "," << e.scene_seed << "," << e.terminal_tick << ","
          << fmt_g17(e.max_u) << "," << (e.reach ? 1 : 0) << "," << (e.pick ? 1 : 0)
          << "," << (e.task ? 1 : 0) << "," << e.n_recoveries << "\n";
  };

  std::vector<std::string> outputs;
  for (const auto& mr : report.modes) {
    const std::string f = "episodes_" + mr.mode + ".csv";
    write_episode_csv(cfg.out + "/" + f, mr.episodes);
    outputs.push_back(f);
  }
  write_episode_csv(cfg.out + "/" + kBinningEpisodesFile, report.binning);
  outputs.push_back(kBinningEpisodesFile);

  {
    std::ofstream csv(cfg.out + "/" + kResultsTableFile, std::ios::binary);
    csv << "mode,n,reach_pct,pick_pct,task_pct,task_se_pct\n";
    for (const auto& mr : report.modes) {
      const double p = mr.rate(&EpisodeSummary::task);
      csv << mr.mode << "," << mr.episodes.size() << ","
          << fmt_g17(100.0 * mr.rate(&EpisodeSummary::reach)) << ","
          << fmt_g17(100.0 * mr.rate(&EpisodeSummary::pick)) << ","
          << fmt_g17(100.0 * p) << "," << fmt_g17(se_percent(p, mr.episodes.size()))
          << "\n";
    }
    outputs.push_back(kResultsTableFile);
  }

  {
    // paired discordance counts of each recovery mode against the plain rollout
    std::ofstream csv(cfg.out + "/" + kMcNemarFile, std::ios::binary);
    csv << "mode,both,only_mode,only_none,neither\n";
    const ModeResult* none = nullptr;
    for (const auto& mr : report.modes)
      if (mr.mode == "none") none = &mr;
    if (none != nullptr) {
      for (const auto& mr : report.modes) {
        if (mr.mode == "none" || mr.mode == "vmc") continue;
        std::size_t both = 0, only_mode = 0, only_none = 0, neither = 0;
        for (std::size_t i = 0; i < mr.episodes.size(); ++i) {
          const bool a = mr.episodes[i].task, b = none->episodes[i].task;
          both += a && b;
          only_mode += a && !b;
          only_none += !a && b;
          neither += !a && !b;
        }
        csv << mr.mode << "," << both << "," << only_mode << "," << only_none << ","
            << neither << "\n";
      }
    }
    outputs.push_back(kMcNemarFile);
  }

  {
    std::ofstream csv(cfg.out + "/" + kRecoveryLogFile, std::ios::binary);
    csv << recovery::recovery_log_header() << "\n";
    for (const auto& mr : report.modes)
      for (const auto& e : mr.events) csv << recovery::recovery_log_line(e) << "\n";
    outputs.push_back(kRecoveryLogFile);
  }

  std::vector<std::string> inputs = {kPolicyFile};
  if (needs_threshold) inputs.push_back(kThresholdFile);
  if (needs_foresight) inputs.push_back(kForesightModelFile);
  m.record(cfg.out, "evaluate", cfg.seed, inputs, outputs);
  m.save(cfg.out);
  return report;
}

// ---------------------------------------------------------------------------
// Stage: report
// ---------------------------------------------------------------------------

struct BinRow {
  std::size_t count = 0;
  double mean_max_u = 0.0;
  double success_rate = 0.0;
};

// Equal-count bins over episodes sorted by their window-sum peak; the first
// (n mod k) bins absorb the remainder so sizes differ by at most one.
inline std::vector<BinRow> bin_episodes(std::vector<EpisodeSummary> eps, std::size_t k) {
  if (eps.size() < k) throw std::invalid_argument("bin_episodes: fewer episodes than bins");
  std::stable_sort(eps.begin(), eps.end(), [](const EpisodeSummary& a,
                                              const EpisodeSummary& b) {
    return a.max_u < b.max_u;
  });
  std::vector<BinRow> bins(k);
  const std::size_t base = eps.size() / k, rem = eps.size() % k;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < k; ++b) {
    const std::size_t sz = base + (b < rem ? 1 : 0);
    BinRow row;
    row.count = sz;
    for (std::size_t i = 0; i < sz; ++i) {
      row.mean_max_u += eps[pos + i].max_u / static_cast<double>(sz);
      row.success_rate += eps[pos + i].task ? 1.0 / static_cast<double>(sz) : 0.0;
    }
    bins[b] = row;
    pos += sz;
  }
  return bins;
}

inline std::vector<EpisodeSummary> load_episode_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open episode table: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty episode table: " + path);
  std::vector<EpisodeSummary> eps;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 8) throw std::runtime_error("malformed episode row: " + line);
    EpisodeSummary e;
    e.episode_id = std::stoull(f[0]);
    e.scene_seed = std::stoull(f[1]);
    e.terminal_tick = std::stoull(f[2]);
    e.max_u = std::stod(f[3]);
    e.reach = f[4] == "1";
    e.pick = f[5] == "1";
    e.task = f[6] == "1";
    e.n_recoveries = std::stoull(f[7]);
    eps.push_back(e);
  }
  return eps;
}

struct ReportResult {
  std::vector<BinRow> bins;
  double bin_spearman = 0.0;
  std::string text;
};

inline ReportResult cmd_report(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Manifest m = Manifest::load(cfg.out);
  m.verify(cfg.out, kBinningEpisodesFile);

  const auto mode_names = cfg.mode_list();
  std::vector<std::pair<std::string, std::vector<EpisodeSummary>>> tables;
  for (const auto& name : mode_names) {
    const std::string f = "episodes_" + name + ".csv";
    m.verify(cfg.out, f);
    tables.emplace_back(name, load_episode_csv(cfg.out + "/" + f));
  }
  const auto pool = load_episode_csv(cfg.out + "/" + kBinningEpisodesFile);

  ReportResult res;
  res.bins = bin_episodes(pool, 10);
  {
    std::ofstream csv(cfg.out + "/" + kBinningFile, std::ios::binary);
    csv << "bin,count,mean_max_window_sum,success_rate\n";
    for (std::size_t b = 0; b < res.bins.size(); ++b)
      csv << (b + 1) << "," << res.bins[b].count << ","
          << fmt_g17(res.bins[b].mean_max_u) << "," << fmt_g17(res.bins[b].success_rate)
          << "\n";
  }
  std::vector<double> xs, ys;
  for (const auto& b : res.bins) {
    xs.push_back(b.mean_max_u);
    ys.push_back(b.success_rate);
  }
  res.bin_spearman = spearman(xs, ys);

  std::ostringstream txt;
  txt << "task: " << cfg.task << "   scenes per mode: "
      << (tables.empty() ? 0 : tables.front().second.size()) << "\n\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %6s %8s %8s %8s %10s\n", "mode", "n", "reach%",
                "pick%", "task%", "se(task)");
  txt << buf;
  for (const auto& [name, eps] : tables) {
    std::size_t reach = 0, pick = 0, task = 0;
    for (const auto& e : eps) {
      reach += e.reach;
      pick += e.pick;
      task += e.task;
    }
    const double n = static_cast<double>(eps.size());
    const double p = static_cast<double>(task) / n;
    std::snprintf(buf, sizeof buf, "%-10s %6zu %8.2f %8.2f %8.2f %10.2f\n", name.c_str(),
                  eps.size(), 100.0 * reach / n, 100.0 * pick / n, 100.0 * p,
                  se_percent(p, eps.size()));
    txt << buf;
  }
  txt << "\ncalibration bins over " << pool.size()
      << " plain rollouts (sorted by window-sum peak):\n";
  std::snprintf(buf, sizeof buf, "%4s %6s %18s %14s\n", "bin", "n", "mean window sum",
                "success rate");
  txt << buf;
  for (std::size_t b = 0; b < res.bins.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%4zu %6zu %18.6f %14.3f\n", b + 1, res.bins[b].count,
                  res.bins[b].mean_max_u, res.bins[b].success_rate);
    txt << buf;
  }
  std::snprintf(buf, sizeof buf,
                "spearman(bin mean window sum, bin success rate) = %.4f\n",
                res.bin_spearman);
  txt << "\n" << buf;
  res.text = txt.str();

  {
    std::ofstream out(cfg.out + "/" + kReportFile, std::ios::binary);
    out << res.text;
  }
  std::vector<std::string> inputs = {kBinningEpisodesFile};
  for (const auto& name : mode_names) inputs.push_back("episodes_" + name + ".csv");
  m.record(cfg.out, "report", cfg.seed, inputs, {kBinningFile, kReportFile});
  m.save(cfg.out);
  return res;
}

}  // namespace ivmc::harness
