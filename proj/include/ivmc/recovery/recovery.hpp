#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivmc/common.hpp"
#include "ivmc/env/dataset.hpp"
#include "ivmc/env/env.hpp"
#include "ivmc/foresight/foresight.hpp"
#include "ivmc/policy/policy.hpp"
#include "ivmc/uncertainty/uncertainty.hpp"

namespace ivmc::recovery {

enum class Mode { MinUnc, Rand, Init, None };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::MinUnc: return "min_unc";
    case Mode::Rand: return "rand";
    case Mode::Init: return "init";
    case Mode::None: return "none";
  }
  return "?";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "min_unc") return Mode::MinUnc;
  if (s == "rand") return Mode::Rand;
  if (s == "init") return Mode::Init;
  if (s == "none") return Mode::None;
  throw std::invalid_argument("unknown recovery mode: " + s);
}

struct ControllerConfig {
  std::size_t mc_samples = unc::kDefaultSamples;
  double threshold = std::numeric_limits<double>::infinity();  // C
  std::size_t window = unc::kWindow;
  std::uint64_t t_recovery_init = 40;
  std::size_t backtrack_depth = 20;
  std::size_t recovery_steps = 25;
  Mode mode = Mode::None;
  std::size_t max_steps = 200;  // 2H

  void validate() const {
    if (mc_samples < 2 || window == 0 || t_recovery_init == 0 ||
        backtrack_depth == 0 || max_steps == 0)
      throw std::invalid_argument("ControllerConfig: all sizes must be positive");
  }
};

struct BacktrackEntry {
  std::uint64_t tick = 0;
  env::Vec3 ee_pos;         // pose after this tick's step
  env::Vec3 applied_delta;  // displacement actually applied this tick
  nn::LstmMemory mem;       // memory after this tick's advance
  double uncertainty = 0.0;
};

struct RecoveryEvent {
  std::uint64_t episode_id = 0;
  std::uint64_t activation_index = 0;  // 1-based within the episode
  std::uint64_t tick = 0;              // gate-trigger tick
  Mode mode = Mode::None;
  double window_sum = 0.0;
  double threshold = 0.0;
  std::uint64_t t_recovery_at_gate = 0;
  std::int64_t backtrack_target_tick = -1;  // -1 when the mode does not backtrack
};

inline std::string recovery_log_header() {
  return "episode_id,activation_index,tick,mode,window_sum,threshold,"
         "t_recovery_at_gate,backtrack_target_tick";
}

inline std::string recovery_log_line(const RecoveryEvent& e) {
  char buf[64];
  std::string s = std::to_string(e.episode_id) + "," +
                  std::to_string(e.activation_index) + "," + std::to_string(e.tick) +
                  "," + mode_name(e.mode) + ",";
  std::snprintf(buf, sizeof buf, "%.17g", e.window_sum);
  s += buf;
  s += ",";
  std::snprintf(buf, sizeof buf, "%.17g", e.threshold);
  s += buf;
  s += "," + std::to_string(e.t_recovery_at_gate) + "," +
       std::to_string(e.backtrack_target_tick);
  return s;
}

struct ControllerState {
  std::deque<BacktrackEntry> fifo;
  unc::UncertaintyTrace trace{unc::kWindow};
  std::uint64_t t_recovery = 40;
  std::uint64_t last_recovery_tick = 0;
  policy::FrameBuffer obs_buffer{4};
  nn::LstmMemory mem;
  std::uint64_t tick = 0;
  std::size_t recoveries = 0;

  void push_entry(const BacktrackEntry& e, std::size_t capacity) {
    fifo.push_back(e);
    while (fifo.size() > capacity) fifo.pop_front();  // oldest-first eviction
  }
};

// Gate of the recovery loop: strict on both conditions, disabled entirely in
// plain-rollout mode.
inline bool should_recover(const ControllerState& cs, const ControllerConfig& cfg) {
  if (cfg.mode == Mode::None) return false;
  if (cs.trace.size() == 0)
    throw std::invalid_argument("should_recover: empty uncertainty trace");
  if (!(cs.tick > cs.last_recovery_tick &&
        cs.tick - cs.last_recovery_tick > cs.t_recovery))
    return false;
  return cs.trace.window_sum() > cfg.threshold;
}

// Rewinds toward the fifo entry with minimum stored uncertainty (earliest on
// ties) by replaying the negated deltas of all newer entries in reverse, with
// the gripper untouched. Restores that entry's memory and refreshes the frame
// buffer. Contact can make the rewind inexact; that is accepted.
// Returns false (no-op) on an empty fifo.
inline bool backtrack(ControllerState& cs, env::EnvState& state,
                      env::ObsMode obs_mode) {
  if (cs.fifo.empty()) return false;
  std::size_t target = 0;
  for (std::size_t i = 1; i < cs.fifo.size(); ++i)
    if (cs.fifo[i].uncertainty < cs.fifo[target].uncertainty) target = i;
  for (std::size_t i = cs.fifo.size(); i-- > target + 1;) {
    const env::Vec3 d = cs.fifo[i].applied_delta;
    state = env::step(state, {env::Vec3{-d.x, -d.y, -d.z}, env::GripperCmd::NoOp});
  }
  cs.mem = cs.fifo[target].mem;
  cs.fifo.erase(cs.fifo.begin() + static_cast<std::ptrdiff_t>(target) + 1, cs.fifo.end());
  cs.obs_buffer.refill(env::observe(state, obs_mode));
  return true;
}

struct EpisodeResult {
  env::EpisodeRecord record;
  std::vector<RecoveryEvent> events;
};

namespace detail {

inline env::StepTrace make_trace(const env::EnvState& before, const env::Observation& obs,
                                 const env::ActionCommand& cmd, const env::EnvState& after,
                                 double uncertainty) {
  env::StepTrace st;
  st.obs = obs;
  st.proprio = env::proprio_of(before);
  st.action = cmd;
  st.applied_delta = after.ee_pos - before.ee_pos;
  st.q_obj = before.object_pos;
  st.q_ee = before.ee_pos;
  st.uncertainty = uncertainty;
  st.state_before = before;
  return st;
}

// One monitored tick: sample, record, execute the given command.
inline void execute_tick(ControllerState& cs, env::EnvState& state,
                         const env::Observation& obs, const env::ActionCommand& cmd,
                         double uncertainty, const ControllerConfig& cfg,
                         env::EpisodeRecord& rec) {
  const env::EnvState before = state;
  state = env::step(state, cmd);
  rec.steps.push_back(make_trace(before, obs, cmd, state, uncertainty));
  BacktrackEntry e;
  e.tick = cs.tick;
  e.ee_pos = state.ee_pos;
  e.applied_delta = state.ee_pos - before.ee_pos;
  e.mem = cs.mem;
  e.uncertainty = uncertainty;
  cs.push_entry(e, cfg.backtrack_depth);
  ++cs.tick;
}

}  // namespace detail

// Uniform draw inside the re-initialization sphere (center above the table,
// radius 0.08), clamped into the workspace box.
inline env::Vec3 sample_reinit_point(Rng& rng) {
  const env::Vec3 center{0.5, 0.5, 0.2};
  const double r = 0.08;
  env::Vec3 p;
  do {
    p = {rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r)};
  } while (p.norm() > r);
  p = center + p;
  p.x = std::clamp(p.x, 0.0, 1.0);
  p.y = std::clamp(p.y, 0.0, 1.0);
  p.z = std::clamp(p.z, env::kZMin, env::kZMax);
  return p;
}

// The full test-time control loop: Monte-Carlo action selection with sliding-
// window uncertainty monitoring, exponential-backoff recovery gating, and the
// configured recovery behaviour. Mode None is the plain rollout.
inline EpisodeResult run_episode(const policy::PolicyModel& model,
                                 const foresight::ForesightModel* fs, env::Task task,
                                 const ControllerConfig& cfg, std::uint64_t scene_seed,
                                 std::uint64_t noise_root, std::uint64_t episode_id) {
  cfg.validate();
  if (cfg.mode == Mode::MinUnc && fs == nullptr)
    throw std::invalid_argument("run_episode: MinUnc mode needs a foresight model");

  env::EnvState state = env::reset(task, scene_seed);
  ControllerState cs;
  cs.trace = unc::UncertaintyTrace(cfg.window);
  cs.t_recovery = cfg.t_recovery_init;
  cs.obs_buffer = policy::FrameBuffer(model.cfg.frame_buffer);
  cs.mem = model.fresh_memory();

  EpisodeResult res;
  res.record.episode_id = episode_id;
  res.record.task = task;
  res.record.scene_seed = scene_seed;
  res.record.obs_mode = model.cfg.obs_mode;

  while (cs.tick < cfg.max_steps && !env::task_success(state)) {
    const env::Observation obs = env::observe(state, model.cfg.obs_mode);
    cs.obs_buffer.push(obs);
    nn::LstmMemory next;
    const unc::McResult mc =
        unc::mc_sample(model, cs.obs_buffer.view(), env::proprio_of(state), cs.mem,
                       next, cfg.mc_samples, noise_root, cs.tick);
    cs.mem = next;
    const double u = unc::uncertainty_from_samples(mc.set, model.cfg.lambda);
    cs.trace.push(u);
    const double ws = cs.trace.window_sum();
    if (ws > res.record.max_window_sum) res.record.max_window_sum = ws;

    if (should_recover(cs, cfg)) {
      ++cs.recoveries;
      RecoveryEvent ev;
      ev.episode_id = episode_id;
      ev.activation_index = cs.recoveries;
      ev.tick = cs.tick;
      ev.mode = cfg.mode;
      ev.window_sum = ws;
      ev.threshold = cfg.threshold;
      ev.t_recovery_at_gate = cs.t_recovery;
      // backoff bookkeeping happens before the recovery rollout
      cs.last_recovery_tick = cs.tick;
      cs.t_recovery *= 2;

      if (cfg.mode == Mode::MinUnc) {
        if (!cs.fifo.empty()) {
          std::size_t target = 0;
          for (std::size_t i = 1; i < cs.fifo.size(); ++i)
            if (cs.fifo[i].uncertainty < cs.fifo[target].uncertainty) target = i;
          ev.backtrack_target_tick = static_cast<std::int64_t>(cs.fifo[target].tick);
        }
        backtrack(cs, state, model.cfg.obs_mode);
        for (std::size_t k = 0;
             k < cfg.recovery_steps && cs.tick < cfg.max_steps && !env::task_success(state);
             ++k) {
          const env::Observation robs = env::observe(state, model.cfg.obs_mode);
          cs.obs_buffer.push(robs);
          nn::LstmMemory rnext;
          const auto pick = foresight::min_uncertainty_action(
              model, *fs, cs.obs_buffer.view(), env::proprio_of(state), cs.mem, rnext,
              cfg.mc_samples, noise_root, cs.tick);
          cs.mem = rnext;
          cs.trace.push(pick.uncertainty);
          if (cs.trace.window_sum() > res.record.max_window_sum)
            res.record.max_window_sum = cs.trace.window_sum();
          detail::execute_tick(cs, state, robs, pick.action, pick.uncertainty, cfg,
                               res.record);
        }
      } else {
        Rng rrng(derive_seed(noise_root, 0x726563, cs.recoveries));
        if (cfg.mode == Mode::Rand) {
          for (std::size_t k = 0;
               k < cfg.recovery_steps && cs.tick < cfg.max_steps && !env::task_success(state);
               ++k) {
            const env::Vec3 d{rrng.uniform(-env::kMaxStep, env::kMaxStep),
                              rrng.uniform(-env::kMaxStep, env::kMaxStep),
                              rrng.uniform(-env::kMaxStep, env::kMaxStep)};
            const env::EnvState before = state;
            state = env::step(state, {d, env::GripperCmd::NoOp});
            res.record.steps.push_back(detail::make_trace(
                before, env::observe(before, model.cfg.obs_mode),
                {d, env::GripperCmd::NoOp}, state,
                std::numeric_limits<double>::quiet_NaN()));
            ++cs.tick;
          }
        } else {  // Init
          const env::Vec3 target = sample_reinit_point(rrng);
          for (std::size_t k = 0;
               k < cfg.recovery_steps && cs.tick < cfg.max_steps && !env::task_success(state);
               ++k) {
            const env::Vec3 d = target - state.ee_pos;
            const env::EnvState before = state;
            state = env::step(state, {d, env::GripperCmd::Open});
            res.record.steps.push_back(detail::make_trace(
                before, env::observe(before, model.cfg.obs_mode),
                {d, env::GripperCmd::Open}, state,
                std::numeric_limits<double>::quiet_NaN()));
            ++cs.tick;
          }
        }
        cs.mem = model.fresh_memory();  // baselines reset, never restore
      }
      res.events.push_back(ev);
      continue;
    }

    const env::ActionCommand cmd = unc::mean_action(mc.set);
    detail::execute_tick(cs, state, obs, cmd, u, cfg, res.record);
  }

  res.record.final_state = state;
  res.record.terminal_tick = cs.tick;
  res.record.stage_flags = env::success_metrics(res.record);
  return res;
}

// Plain Bayesian visuomotor rollout: the same engine with the gate disabled.
inline EpisodeResult rollout_bvmc(const policy::PolicyModel& model, env::Task task,
                                  std::size_t mc_samples, std::size_t max_steps,
                                  std::uint64_t scene_seed, std::uint64_t noise_root,
                                  std::uint64_t episode_id) {
  ControllerConfig cfg;
  cfg.mode = Mode::None;
  cfg.mc_samples = mc_samples;
  cfg.max_steps = max_steps;
  return run_episode(model, nullptr, task, cfg, scene_seed, noise_root, episode_id);
}

}  // namespace ivmc::recovery
