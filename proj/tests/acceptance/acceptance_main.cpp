// Acceptance gate for the full pipeline. Each numbered criterion prints one
// pass/fail line; the exit code is the number of failures. Oracle checks are
// reimplemented independently in this file rather than calling back into the
// code paths they verify.

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ivmc/harness/pipeline.hpp"
#include "ivmc/nn/gradcheck.hpp"

using namespace ivmc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  int id = 0;
  bool pass = false;
  double secs = 0.0;
  double budget = 0.0;
  std::string desc, note;
};

std::vector<Outcome> outcomes;

// extra_secs: shared pipeline time attributed to this criterion's budget
template <class Fn>
void criterion(int id, const char* desc, double budget_s, double extra_secs, Fn&& fn) {
  Outcome o;
  o.id = id;
  o.desc = desc;
  o.budget = budget_s;
  const auto t0 = Clock::now();
  try {
    o.pass = fn(o.note);
  } catch (const std::exception& e) {
    o.pass = false;
    o.note = std::string("exception: ") + e.what();
  }
  o.secs = seconds_since(t0) + extra_secs;
  if (o.secs >= budget_s) {
    o.pass = false;
    o.note += (o.note.empty() ? "" : "; ") + std::string("over time budget");
  }
  outcomes.push_back(o);
  std::printf("criterion %2d: %s  (%.1fs / %.0fs budget)  %s%s%s\n", id,
              o.pass ? "PASS" : "FAIL", o.secs, o.budget, desc,
              o.note.empty() ? "" : " -- ", o.note.c_str());
  std::fflush(stdout);
}

// ---- independent oracles ---------------------------------------------------

std::array<double, 4> oracle_transform(const env::Vec3& u, double lambda) {
  const double n = std::sqrt(u.x * u.x + u.y * u.y + u.z * u.z);
  if (n < 1e-9) return {lambda * n, 0.0, 0.0, 0.0};
  return {lambda * n, (1.0 - lambda) * u.x / n, (1.0 - lambda) * u.y / n,
          (1.0 - lambda) * u.z / n};
}

// two-pass full covariance matrix, unbiased, summed diagonal
double oracle_cov_trace(const std::vector<std::array<double, 4>>& xs) {
  const double n = static_cast<double>(xs.size());
  std::array<double, 4> mu{};
  for (const auto& x : xs)
    for (int k = 0; k < 4; ++k) mu[k] += x[k] / n;
  double cov[4][4] = {};
  for (const auto& x : xs)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) cov[a][b] += (x[a] - mu[a]) * (x[b] - mu[b]);
  double tr = 0.0;
  for (int k = 0; k < 4; ++k) tr += cov[k][k] / (n - 1.0);
  return tr;
}

struct OracleThreshold {
  double threshold = std::numeric_limits<double>::infinity();
  std::size_t i_star = 0;
  bool degenerate = false;
};

OracleThreshold oracle_threshold(std::vector<unc::ValidationRecord> recs) {
  OracleThreshold out;
  std::size_t n_success = 0;
  for (const auto& r : recs) n_success += r.success;
  if (n_success == 0 || n_success == recs.size()) {
    out.degenerate = true;
    return out;
  }
  const double r_bar = static_cast<double>(n_success) / static_cast<double>(recs.size());
  std::stable_sort(recs.begin(), recs.end(),
                   [](const auto& a, const auto& b) { return a.max_u < b.max_u; });
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::size_t above = 0, above_success = 0;
    for (const auto& r : recs)
      if (r.max_u > recs[i].max_u) {
        ++above;
        above_success += r.success;
      }
    const double obj =
        static_cast<double>(above) * r_bar - static_cast<double>(above_success);
    if (obj > best) {  // strict: ties keep the lowest index
      best = obj;
      out.i_star = i + 1;
      out.threshold = recs[i].max_u;
    }
  }
  return out;
}

policy::HeadOutputs random_sample(Rng& rng) {
  policy::HeadOutputs h;
  h.delta_ee = {0.02 * rng.normal(), 0.02 * rng.normal(), 0.02 * rng.normal()};
  h.grp_logits = {rng.normal(), rng.normal(), rng.normal()};
  h.q_obj = {rng.normal(), rng.normal(), rng.normal()};
  h.q_ee = {rng.normal(), rng.normal(), rng.normal()};
  return h;
}

std::string fnote(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

}  // namespace

int main() {
  const std::string run = "acceptance_run";
  fs::remove_all(run);

  // ---- criterion 1: calibration transform ---------------------------------
  criterion(1, "action calibration transform examples and scale invariance", 1.0, 0.0,
            [](std::string& note) {
    const struct {
      env::Vec3 u;
      double lambda;
      std::array<double, 4> want;
    } ex[] = {{{1, 0, 0}, 0.5, {0.5, 0.5, 0, 0}},
              {{0, 0.03, 0.04}, 0.2, {0.01, 0, 0.48, 0.64}},
              {{0, 0, 0}, 0.7, {0, 0, 0, 0}}};
    for (const auto& e : ex) {
      const auto got = unc::transform_action(e.u, e.lambda);
      for (int k = 0; k < 4; ++k)
        if (std::abs(got[k] - e.want[k]) > 1e-9) {
          note = "listed example mismatch";
          return false;
        }
    }
    Rng rng(2026);
    for (int i = 0; i < 10000; ++i) {
      const env::Vec3 u{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const double c = std::exp(rng.uniform(-3, 3));
      const auto a = unc::transform_action(u, 0.3);
      const auto b = unc::transform_action(u * c, 0.3);
      for (int k = 1; k < 4; ++k)
        if (std::abs(a[k] - b[k]) > 1e-12) {
          note = "direction changed under positive scaling";
          return false;
        }
      if (std::abs(b[0] - c * a[0]) > 1e-9 * std::max(1.0, c)) {
        note = "norm component did not scale linearly";
        return false;
      }
    }
    return true;
  });

  // ---- criterion 2: covariance-trace uncertainty --------------------------
  criterion(2, "sampled uncertainty equals the two-pass covariance oracle", 10.0, 0.0,
            [](std::string& note) {
    Rng rng(7);
    double worst = 0.0;
    for (int set_i = 0; set_i < 1000; ++set_i) {
      const double lambda = rng.uniform(0.0, 1.0);
      unc::ActionSampleSet set;
      std::vector<std::array<double, 4>> xs;
      for (int i = 0; i < 50; ++i) {
        set.samples.push_back(random_sample(rng));
        xs.push_back(oracle_transform(
            {set.samples.back().delta_ee[0], set.samples.back().delta_ee[1],
             set.samples.back().delta_ee[2]},
            lambda));
      }
      const double got = unc::uncertainty_from_samples(set, lambda);
      worst = std::max(worst, std::abs(got - oracle_cov_trace(xs)));
    }
    if (worst > 1e-9) {
      note = fnote("worst oracle gap %.3g", worst);
      return false;
    }
    // identical samples, permutation, translation
    unc::ActionSampleSet same;
    for (int i = 0; i < 10; ++i) same.samples.push_back(same.samples.empty()
                                                            ? random_sample(rng)
                                                            : same.samples.front());
    if (unc::uncertainty_from_samples(same, 0.3) != 0.0) {
      note = "identical samples gave nonzero spread";
      return false;
    }
    unc::ActionSampleSet base;
    for (int i = 0; i < 30; ++i) base.samples.push_back(random_sample(rng));
    const double u0 = unc::uncertainty_from_samples(base, 0.4);
    auto shuffled = base;
    for (std::size_t i = shuffled.samples.size(); i > 1; --i)
      std::swap(shuffled.samples[i - 1], shuffled.samples[rng.uniform_int(i)]);
    if (std::abs(unc::uncertainty_from_samples(shuffled, 0.4) - u0) > 1e-9) {
      note = "not permutation invariant";
      return false;
    }
    std::vector<std::array<double, 4>> xs, shifted;
    for (const auto& s : base.samples)
      xs.push_back(oracle_transform({s.delta_ee[0], s.delta_ee[1], s.delta_ee[2]}, 0.4));
    shifted = xs;
    for (auto& x : shifted)
      for (int k = 0; k < 4; ++k) x[k] += 2.5;
    if (std::abs(oracle_cov_trace(shifted) - oracle_cov_trace(xs)) > 1e-9) {
      note = "covariance not translation invariant";
      return false;
    }
    return true;
  });

  // ---- criterion 3: gradient integrity ------------------------------------
  criterion(3, "finite-difference gradient checks, policy and scorer", 120.0, 0.0,
            [](std::string& note) {
    double worst = 0.0;
    for (int inst = 0; inst < 5; ++inst) {
      auto full = env::run_expert_episode(env::Task::Pushing, 400 + 7 * inst, 100,
                                          env::ObsMode::GridImage);
      if (!full) {
        note = "expert episode unexpectedly failed";
        return false;
      }
      env::EpisodeRecord ep = *full;
      ep.steps.erase(ep.steps.begin(), ep.steps.begin() + 2 * inst);
      ep.steps.resize(3);

      policy::PolicyConfig cfg;
      cfg.n_dropout_layers = inst % 2 == 0 ? 1 : 2;
      policy::PolicyModel m(cfg);
      m.init(1000 + inst);
      // sparse grids leave relu pre-activations exactly on the kink with zero
      // conv biases; nudge off it so central differences are well defined
      Rng bias_rng(555 + inst);
      for (double& b : m.conv1.b) b = 0.05 * bias_rng.normal();
      for (double& b : m.conv2.b) b = 0.05 * bias_rng.normal();

      auto loss_fn = [&]() {
        m.zero_grad();
        Rng noise(derive_seed(2000 + inst, 0x667a));
        return policy::detail::episode_bptt(m, ep, true, &noise, 1.0, true);
      };
      const auto res = nn::gradient_check(m.params(), loss_fn, 1e-6, 10, 5 + inst);
      worst = std::max(worst, res.max_rel_err);
      if (res.max_rel_err >= 1e-4) {
        note = "policy " + res.worst_param + " rel err " + fnote("%.3g", res.max_rel_err);
        return false;
      }
    }
    for (int inst = 0; inst < 5; ++inst) {
      foresight::ForesightModel fm;
      fm.init(300 + inst);
      Rng rng(31 + inst);
      std::vector<std::vector<double>> es, as;
      std::vector<double> ts;
      for (int i = 0; i < 8; ++i) {
        std::vector<double> e(64), a(foresight::kActionFeatures);
        for (double& x : e) x = 0.5 * rng.normal();
        for (double& x : a) x = 0.3 * rng.normal();
        es.push_back(e);
        as.push_back(a);
        ts.push_back(std::abs(rng.normal()));
      }
      auto loss_fn = [&]() {
        fm.zero_grad();
        double loss = 0.0;
        for (std::size_t i = 0; i < es.size(); ++i) {
          foresight::ForesightModel::Cache c;
          const double y = fm.forward(es[i], as[i], c);
          loss += (y - ts[i]) * (y - ts[i]);
          fm.backward(c, 2.0 * (y - ts[i]));
        }
        return loss;
      };
      const auto res = nn::gradient_check(fm.params(), loss_fn, 1e-6, 40, 17 + inst);
      worst = std::max(worst, res.max_rel_err);
      if (res.max_rel_err >= 1e-4) {
        note = "scorer " + res.worst_param + " rel err " + fnote("%.3g", res.max_rel_err);
        return false;
      }
    }
    note = fnote("worst rel err %.2g", worst);
    return true;
  });

  // ---- criterion 4: threshold selection -----------------------------------
  criterion(4, "threshold scan matches the exhaustive oracle", 5.0, 0.0,
            [](std::string& note) {
    {
      std::vector<unc::ValidationRecord> rec = {
          {0, 1.0, true}, {1, 2.0, true}, {2, 3.0, false}, {3, 4.0, false}};
      const auto th = unc::pick_threshold(rec);
      if (th.degenerate || th.i_star != 2 || std::abs(th.threshold - 2.0) > 1e-12) {
        note = "worked 4-record example mismatch";
        return false;
      }
    }
    {
      std::vector<unc::ValidationRecord> all_s = {{0, 1.0, true}, {1, 2.0, true}};
      std::vector<unc::ValidationRecord> all_f = {{0, 1.0, false}, {1, 2.0, false}};
      if (!unc::pick_threshold(all_s).degenerate ||
          !std::isinf(unc::pick_threshold(all_s).threshold) ||
          !unc::pick_threshold(all_f).degenerate) {
        note = "degenerate sentinel mismatch";
        return false;
      }
    }
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 5 + rng.uniform_int(60);
      std::vector<unc::ValidationRecord> recs;
      for (std::size_t i = 0; i < n; ++i) {
        // duplicated values exercise the tie rules
        const double u = rng.uniform_int(4) == 0 && !recs.empty()
                             ? recs.back().max_u
                             : rng.uniform(0.0, 8.0);
        recs.push_back({i, u, rng.uniform_open() < 0.5});
      }
      const auto want = oracle_threshold(recs);
      const auto got = unc::pick_threshold(recs);
      if (want.degenerate != got.degenerate) {
        note = "degenerate flag mismatch";
        return false;
      }
      if (!want.degenerate &&
          (want.i_star != got.i_star || want.threshold != got.threshold)) {
        note = fnote("trial i*=%g vs oracle %g", double(got.i_star), double(want.i_star));
        return false;
      }
    }
    return true;
  });

  // ---- criterion 5: control-loop mechanics --------------------------------
  criterion(5, "recovery gate, backoff, fifo, backtrack, plain-mode identity", 60.0,
            0.0, [](std::string& note) {
    using namespace recovery;
    // hand-simulated gate table: {tick, last, t_rec, window_sum, C, expect}
    const struct {
      std::uint64_t tick, last, t_rec;
      double ws, c;
      bool want;
    } table[] = {
        {40, 0, 40, 10.0, 1.0, false},  {41, 0, 40, 10.0, 1.0, true},
        {41, 0, 40, 1.0, 1.0, false},   {41, 0, 40, 1.0 + 1e-9, 1.0, true},
        {100, 60, 40, 10.0, 1.0, false}, {101, 60, 40, 10.0, 1.0, true},
        {500, 0, 40, 10.0, std::numeric_limits<double>::infinity(), false},
        {200, 100, 160, 10.0, 1.0, false},
    };
    for (const auto& row : table) {
      ControllerState cs;
      cs.tick = row.tick;
      cs.last_recovery_tick = row.last;
      cs.t_recovery = row.t_rec;
      cs.trace.push(row.ws);
      ControllerConfig cfg;
      cfg.mode = Mode::Rand;
      cfg.threshold = row.c;
      if (should_recover(cs, cfg) != row.want) {
        note = "gate table row mismatch";
        return false;
      }
      cfg.mode = Mode::None;
      if (should_recover(cs, cfg)) {
        note = "plain mode fired the gate";
        return false;
      }
    }
    // fifo cap
    {
      ControllerState cs;
      for (std::uint64_t t = 0; t < 75; ++t) {
        BacktrackEntry e;
        e.tick = t;
        cs.push_entry(e, 20);
        if (cs.fifo.size() > 20) {
          note = "fifo exceeded its depth";
          return false;
        }
      }
      if (cs.fifo.front().tick != 55) {
        note = "fifo evicted the wrong end";
        return false;
      }
    }
    // backoff doubling across >= 4 activations
    policy::PolicyConfig pcfg;
    pcfg.obs_mode = env::ObsMode::OracleState;
    policy::PolicyModel m(pcfg);
    m.init(5);
    {
      ControllerConfig cfg;
      cfg.mode = Mode::Rand;
      cfg.mc_samples = 5;
      cfg.threshold = 1e-12;
      cfg.max_steps = 900;
      const auto res = run_episode(m, nullptr, env::Task::Pushing, cfg, 81, 82, 0);
      if (res.events.size() < 4) {
        note = fnote("only %g activations", double(res.events.size()));
        return false;
      }
      for (std::size_t k = 0; k < res.events.size(); ++k)
        if (res.events[k].t_recovery_at_gate != (40ull << k)) {
          note = "backoff interval not doubling";
          return false;
        }
    }
    // contact-free backtrack to 1e-9
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      env::EnvState state = env::reset(env::Task::Pushing, 300 + trial);
      state.ee_pos = {0.5, 0.5, 0.2};
      ControllerState cs;
      cs.obs_buffer = policy::FrameBuffer(4);
      for (std::uint64_t t = 0; t < 12; ++t) {
        const env::Vec3 d{rng.uniform(-0.015, 0.015), rng.uniform(-0.015, 0.015),
                          rng.uniform(-0.01, 0.01)};
        const env::EnvState before = state;
        state = env::step(state, {d, env::GripperCmd::NoOp});
        BacktrackEntry e;
        e.tick = t;
        e.ee_pos = state.ee_pos;
        e.applied_delta = state.ee_pos - before.ee_pos;
        e.mem = nn::LstmMemory(4);
        e.uncertainty = 1.0 + static_cast<double>(t);
        cs.push_entry(e, 20);
      }
      cs.fifo[3].uncertainty = 0.0;
      const env::Vec3 want = cs.fifo[3].ee_pos;
      backtrack(cs, state, env::ObsMode::OracleState);
      if (env::dist(state.ee_pos, want) >= 1e-9) {
        note = "contact-free rewind missed the stored pose";
        return false;
      }
    }
    // mode None identical to the plain rollout helper
    {
      ControllerConfig cfg;
      cfg.mode = Mode::None;
      cfg.mc_samples = 10;
      cfg.max_steps = 60;
      const auto a = run_episode(m, nullptr, env::Task::Pushing, cfg, 71, 72, 0);
      const auto b = rollout_bvmc(m, env::Task::Pushing, 10, 60, 71, 72, 0);
      if (a.record.steps.size() != b.record.steps.size() || !a.events.empty()) {
        note = "plain-mode rollout diverged";
        return false;
      }
      for (std::size_t i = 0; i < a.record.steps.size(); ++i)
        if (a.record.steps[i].uncertainty != b.record.steps[i].uncertainty ||
            a.record.steps[i].applied_delta.x != b.record.steps[i].applied_delta.x ||
            a.record.steps[i].applied_delta.y != b.record.steps[i].applied_delta.y ||
            a.record.steps[i].applied_delta.z != b.record.steps[i].applied_delta.z) {
          note = "plain-mode step traces differ";
          return false;
        }
    }
    return true;
  });

  // ---- shared desk-scale pipeline for criteria 6-9 ------------------------
  harness::RunConfig cfg;  // desk defaults: pushing, grid observations
  cfg.seed = 1;
  cfg.out = run;
  std::map<std::string, double> stage_s;
  auto stage = [&](const char* name, auto&& fn) {
    const auto t0 = Clock::now();
    fn();
    stage_s[name] = seconds_since(t0);
    std::printf("  [pipeline] %s: %.1fs\n", name, stage_s[name]);
    std::fflush(stdout);
  };
  std::printf("running the shared desk-scale pipeline (task=%s, %zu demos)...\n",
              cfg.task.c_str(), cfg.demos);
  stage("gen-demos", [&] { harness::cmd_gen_demos(cfg); });
  stage("train", [&] { harness::cmd_train(cfg); });
  stage("pick-threshold", [&] { harness::cmd_pick_threshold(cfg); });
  stage("collect-foresight", [&] { harness::cmd_collect_foresight(cfg); });
  foresight::ForesightTrainResult ftrain;
  stage("train-foresight", [&] { ftrain = harness::cmd_train_foresight(cfg); });
  harness::EvalReport eval;
  stage("evaluate", [&] { eval = harness::cmd_evaluate(cfg); });
  harness::ReportResult report;
  stage("report", [&] { report = harness::cmd_report(cfg); });

  const auto model = policy::PolicyModel::load(run + "/" + harness::kPolicyFile);
  const auto scorer =
      foresight::ForesightModel::load(run + "/" + harness::kForesightModelFile);

  // ---- criterion 6: MC convergence ----------------------------------------
  criterion(6, "MC action error converges by 50 samples", 600.0, 0.0,
            [&](std::string& note) {
    std::vector<env::EpisodeRecord> held_out;
    for (int i = 0; held_out.size() < 6 && i < 30; ++i) {
      auto ep = env::run_expert_episode(env::Task::Pushing, derive_seed(777, 0x686f, i),
                                        100, env::ObsMode::GridImage);
      if (ep) held_out.push_back(std::move(*ep));
    }
    const auto curve =
        unc::mc_convergence_curve(model, held_out, {5, 10, 25, 50, 100}, 4242);
    for (std::size_t k = 1; k < curve.size(); ++k)
      if (curve[k].error > 1.10 * curve[k - 1].error) {
        note = fnote("error rose from %.4g to %.4g", curve[k - 1].error, curve[k].error);
        return false;
      }
    const double e50 = curve[3].error, e100 = curve[4].error;
    note = fnote("err(50)=%.4g err(100)=%.4g", e50, e100);
    return std::abs(e50 - e100) < 0.10 * e50;
  });

  // ---- criterion 7: inverse correlation -----------------------------------
  criterion(7, "bin success rate inversely correlated with peak window sum", 2700.0,
            stage_s["gen-demos"] + stage_s["train"] + stage_s["evaluate"],
            [&](std::string& note) {
    if (eval.binning.size() < 400) {
      note = "fewer than 400 plain rollouts";
      return false;
    }
    note = fnote("spearman %.3f over %g episodes", report.bin_spearman,
                 double(eval.binning.size()));
    return report.bin_spearman <= -0.5;
  });

  // ---- criterion 8: recovery uplift ---------------------------------------
  double pipeline_total = 0.0;
  for (const auto& [k, v] : stage_s) pipeline_total += v;
  criterion(8, "min-uncertainty recovery lifts paired task success", 5400.0,
            pipeline_total, [&](std::string& note) {
    std::map<std::string, const harness::ModeResult*> by_mode;
    for (const auto& mr : eval.modes) by_mode[mr.mode] = &mr;
    for (const char* need : {"none", "rand", "init", "min_unc"})
      if (!by_mode.count(need)) {
        note = std::string("mode missing from the evaluation: ") + need;
        return false;
      }
    const std::size_t n = by_mode["none"]->episodes.size();
    if (n < 100) {
      note = "fewer than 100 paired scenes";
      return false;
    }
    auto pct = [&](const char* m) {
      return 100.0 * by_mode[m]->rate(&harness::EpisodeSummary::task);
    };
    const double none = pct("none"), minu = pct("min_unc"), rnd = pct("rand"),
                 ini = pct("init");
    // paired discordance counts against the plain rollout
    std::string mcn;
    for (const char* m : {"min_unc", "rand", "init"}) {
      std::size_t only_m = 0, only_none = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool a = by_mode[m]->episodes[i].task;
        const bool b = by_mode["none"]->episodes[i].task;
        only_m += a && !b;
        only_none += !a && b;
      }
      mcn += std::string(" ") + m + " +" + std::to_string(only_m) + "/-" +
             std::to_string(only_none);
    }
    note = fnote("none %.0f%% min_unc %.0f%% rand/init %.0f/%.0f%%", none, minu, rnd) +
           fnote("/%.0f%%; mcnemar", ini) + mcn;
    return minu >= none + 3.0 && minu >= std::max(rnd, ini) - 2.0;
  });

  // ---- criterion 9: foresight quality -------------------------------------
  criterion(9, "foresight scorer generalizes and argmin matches exhaustive scoring",
            600.0, stage_s["collect-foresight"] + stage_s["train-foresight"],
            [&](std::string& note) {
    if (!(ftrain.r_squared > 0.2)) {
      note = fnote("held-out R^2 %.3f", ftrain.r_squared);
      return false;
    }
    auto ep = env::run_expert_episode(env::Task::Pushing, derive_seed(888, 0x6172),
                                      100, env::ObsMode::GridImage);
    if (!ep) {
      note = "expert episode unexpectedly failed";
      return false;
    }
    policy::FrameBuffer buf(model.cfg.frame_buffer);
    nn::LstmMemory mem = model.fresh_memory();
    for (std::size_t t = 0; t < std::min<std::size_t>(12, ep->steps.size()); ++t) {
      buf.push(ep->steps[t].obs);
      nn::LstmMemory picked_mem, oracle_mem;
      const auto pick = foresight::min_uncertainty_action(
          model, scorer, buf.view(), ep->steps[t].proprio, mem, picked_mem, 20, 999, t);
      // identical candidate set, scored independently
      const auto mc = unc::mc_sample(model, buf.view(), ep->steps[t].proprio, mem,
                                     oracle_mem, 20, 999, t);
      std::size_t best = 0;
      double best_score = 0.0;
      for (std::size_t i = 0; i < mc.set.samples.size(); ++i) {
        const double sc = foresight::predict_uncertainty(
            scorer, mc.e.e, foresight::action_features(mc.set.samples[i]));
        if (i == 0 || sc < best_score) {
          best = i;
          best_score = sc;
        }
      }
      if (pick.index != best || pick.score != best_score) {
        note = "argmin selection disagreed with exhaustive scoring";
        return false;
      }
      mem = picked_mem;
    }
    note = fnote("held-out R^2 %.3f", ftrain.r_squared);
    return true;
  });

  // ---- criterion 10: determinism across worker counts ---------------------
  criterion(10, "pipeline artifacts byte-identical across reruns and worker counts",
            1200.0, 0.0, [](std::string& note) {
    auto small = [](const std::string& out, std::size_t workers) {
      harness::RunConfig c;
      c.obs_mode = "oracle";
      c.demos = 8;
      c.horizon = 80;
      c.epochs = 4;
      c.batch_episodes = 4;
      c.mc_samples = 5;
      c.window = 5;
      c.n_val = 10;
      c.n_eval = 6;
      c.n_binning = 17;
      c.foresight_episodes = 4;
      c.foresight_epochs = 25;
      c.seed = 33;
      c.out = out;
      c.workers = workers;
      return c;
    };
    const std::string d1 = "acceptance_det_w1", d3 = "acceptance_det_w3";
    fs::remove_all(d1);
    fs::remove_all(d3);
    for (const auto& c : {small(d1, 1), small(d3, 3)}) {
      harness::cmd_gen_demos(c);
      harness::cmd_train(c);
      harness::cmd_pick_threshold(c);
      harness::cmd_collect_foresight(c);
      harness::cmd_train_foresight(c);
      harness::cmd_evaluate(c);
      harness::cmd_report(c);
    }
    bool ok = true;
    for (const auto& f : fs::directory_iterator(d1)) {
      const std::string name = f.path().filename().string();
      if (file_checksum(d1 + "/" + name) != file_checksum(d3 + "/" + name)) {
        note = "artifact differs across worker counts: " + name;
        ok = false;
        break;
      }
    }
    fs::remove_all(d1);
    fs::remove_all(d3);
    return ok;
  });

  int failures = 0;
  for (const auto& o : outcomes) failures += o.pass ? 0 : 1;
  std::printf("%d/%zu criteria passed\n", int(outcomes.size()) - failures,
              outcomes.size());
  return failures;
}
