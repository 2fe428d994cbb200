#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivmc/env/env.hpp"
#include "ivmc/env/expert.hpp"

namespace ivmc::env {

inline constexpr int kDatasetFormatVersion = 1;

inline std::string gripper_name(GripperCmd g) {
  switch (g) {
    case GripperCmd::Open: return "open";
    case GripperCmd::Close: return "close";
    case GripperCmd::NoOp: return "noop";
  }
  return "?";
}

inline GripperCmd gripper_from_name(const std::string& s) {
  if (s == "open") return GripperCmd::Open;
  if (s == "close") return GripperCmd::Close;
  if (s == "noop") return GripperCmd::NoOp;
  throw std::invalid_argument("unknown gripper command: " + s);
}

struct StageFlags {
  bool reach = false;
  bool pick = false;  // unused for pushing
  bool task = false;  // push / place / reach-with-stick

  bool operator==(const StageFlags& o) const {
    return reach == o.reach && pick == o.pick && task == o.task;
  }
};

struct StepTrace {
  Observation obs;
  ProprioState proprio;
  ActionCommand action;      // as commanded (pre-clip)
  Vec3 applied_delta;        // EE displacement actually applied this tick
  Vec3 q_obj, q_ee;          // auxiliary targets at decision time
  double uncertainty = std::numeric_limits<double>::quiet_NaN();
  EnvState state_before;     // full snapshot for offline re-scans
};

// Full trace of one rollout; the state snapshots allow every summary flag to
// be recomputed offline.
struct EpisodeRecord {
  std::uint64_t episode_id = 0;
  Task task = Task::Pushing;
  std::uint64_t scene_seed = 0;
  ObsMode obs_mode = ObsMode::GridImage;
  std::vector<StepTrace> steps;
  EnvState final_state;
  StageFlags stage_flags;
  std::uint64_t terminal_tick = 0;
  double max_window_sum = 0.0;  // filled by uncertainty-aware rollouts
};

// Offline re-scan of the raw state trace. Flags are hierarchical so that a
// later stage always implies the earlier ones.
inline StageFlags success_metrics(const EpisodeRecord& record) {
  StageFlags f;
  auto scan = [&](const EnvState& s) {
    if (dist(s.ee_pos, s.object_pos) <= kReachRadius + 1e-9) f.reach = true;
    if (s.task != Task::Pushing && s.attached && s.object_pos.z > kPickHeight)
      f.pick = true;
    if (s.task == Task::PickReach && s.attached &&
        dist(s.stick_far_end(), s.target_pos) <= kGoalRadiusXY)
      f.task = true;
  };
  for (const auto& st : record.steps) scan(st.state_before);
  scan(record.final_state);
  const EnvState& last = record.final_state;
  switch (record.task) {
    case Task::Pushing:
      f.task = f.reach && dist_xy(last.object_pos, last.target_pos) <= kGoalRadiusXY;
      break;
    case Task::PickPlace:
      f.task = f.pick && !last.attached &&
               dist_xy(last.object_pos, last.target_pos) <= kGoalRadiusXY &&
               last.object_pos.z <= kObjectRestZ + 1e-9;
      break;
    case Task::PickReach:
      f.task = f.task && f.pick;
      break;
  }
  f.pick = f.pick && f.reach;
  return f;
}

struct DemoDatasetHeader {
  Task task = Task::Pushing;
  std::size_t horizon = 100;  // H, policy-visible episode length cap
  ObsMode obs_mode = ObsMode::GridImage;
  std::string spawn = "6x8";
  std::uint64_t generator_seed = 0;
  std::size_t count = 0;
  double exec_noise = 0.0;  // execution perturbation used during collection
};

struct DemoDataset {
  DemoDatasetHeader header;
  std::vector<EpisodeRecord> records;
};

// Rolls the scripted expert out on one scene. Fails on stall or timeout.
// exec_noise > 0 adds a uniform per-axis perturbation to the EXECUTED delta
// while recording the expert's clean command as the label. The expert replans
// from the perturbed state each tick, so the dataset covers the neighbourhood
// of the nominal path with corrective actions (which behavioural cloning
// needs to stay on-distribution closed loop).
inline std::optional<EpisodeRecord> run_expert_episode(Task task,
                                                       std::uint64_t scene_seed,
                                                       std::size_t horizon,
                                                       ObsMode mode,
                                                       double exec_noise = 0.0) {
  EnvState s = reset(task, scene_seed);
  Rng noise(derive_seed(scene_seed, 0x646e6f69));
  EpisodeRecord rec;
  rec.task = task;
  rec.scene_seed = scene_seed;
  rec.obs_mode = mode;
  bool success = false;
  std::size_t stall = 0;
  for (std::size_t t = 0; t < horizon; ++t) {
    const ActionCommand a = expert_action(s, task);
    StepTrace st;
    st.obs = observe(s, mode);
    st.proprio = proprio_of(s);
    st.action = a;
    st.q_obj = s.object_pos;
    st.q_ee = s.ee_pos;
    st.state_before = s;
    // Perturb the executed motion (xy only, so contact height stays exact)
    // while keeping the clean command as the label; the expert replans from
    // the perturbed state, so the labels teach the policy to correct drift.
    ActionCommand exec = a;
    if (exec_noise > 0.0) {
      exec.delta_ee.x += noise.uniform(-exec_noise, exec_noise);
      exec.delta_ee.y += noise.uniform(-exec_noise, exec_noise);
    }
    const EnvState next = step(s, exec);
    st.applied_delta = next.ee_pos - s.ee_pos;
    const double applied_norm = st.applied_delta.norm();
    rec.steps.push_back(std::move(st));
    if (applied_norm < 1e-9 && !task_success(next)) {
      if (++stall > 50) return std::nullopt;  // unreachable waypoint
    } else {
      stall = 0;
    }
    s = next;
    if (task_success(s)) {
      success = true;
      break;
    }
  }
  rec.final_state = s;
  rec.terminal_tick = rec.steps.size();
  rec.stage_flags = success_metrics(rec);
  if (!success || !rec.stage_flags.task) return std::nullopt;
  return rec;
}

// Runs the expert on successive scene seeds and keeps fully successful
// episodes. Aborts if the expert success rate over attempts drops below 90%.
inline DemoDataset generate_demos(Task task, std::size_t count,
                                  std::uint64_t base_seed, ObsMode mode,
                                  std::size_t horizon = 100,
                                  double exec_noise = 0.0) {
  if (count == 0) throw std::invalid_argument("generate_demos: count must be > 0");
  DemoDataset ds;
  ds.header = {task, horizon, mode, "6x8", base_seed, count, exec_noise};
  std::size_t attempts = 0;
  while (ds.records.size() < count) {
    const std::uint64_t scene_seed = derive_seed(base_seed, 0x64656d6f, attempts);
    ++attempts;
    auto rec = run_expert_episode(task, scene_seed, horizon, mode, exec_noise);
    if (attempts >= 20 &&
        static_cast<double>(ds.records.size() + (rec ? 1 : 0)) <
            0.9 * static_cast<double>(attempts))
      throw std::runtime_error(
          "generate_demos: expert success rate below 90% on task " + task_name(task) +
          " (" + std::to_string(ds.records.size()) + "/" + std::to_string(attempts) + ")");
    if (!rec) continue;
    rec->episode_id = ds.records.size();
    ds.records.push_back(std::move(*rec));
  }
  return ds;
}

namespace detail {

inline void append_real_array(std::string& out, const std::vector<double>& v,
                              const char* fmt) {
  out += '[';
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    std::snprintf(buf, sizeof(buf), fmt, v[i]);
    out += buf;
  }
  out += ']';
}

inline std::vector<double> vec3_to_list(const Vec3& v) { return {v.x, v.y, v.z}; }

}  // namespace detail

// Line-delimited text format: header object, then per-timestep records, with
// one stage-flags summary line closing each episode. Grid values are written
// at 6 significant digits; everything else round-trips exactly.
inline void save_demo_dataset(const DemoDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_demo_dataset: cannot open " + path);
  nlohmann::json hdr = {
      {"format_version", kDatasetFormatVersion},
      {"type", "demo_dataset"},
      {"task", task_name(ds.header.task)},
      {"H", ds.header.horizon},
      {"obs_mode", ds.header.obs_mode == ObsMode::GridImage ? "grid" : "oracle"},
      {"spawn", ds.header.spawn},
      {"seed", ds.header.generator_seed},
      {"count", ds.header.count},
      {"exec_noise", ds.header.exec_noise}};
  out << hdr.dump() << '\n';
  const std::string task = task_name(ds.header.task);
  const bool grid = ds.header.obs_mode == ObsMode::GridImage;
  for (const auto& rec : ds.records) {
    for (std::size_t t = 0; t < rec.steps.size(); ++t) {
      const auto& st = rec.steps[t];
      std::string line;
      line.reserve(grid ? 8192 : 512);
      line += "{\"e\":" + std::to_string(rec.episode_id) + ",\"t\":" + std::to_string(t);
      line += ",\"task\":\"" + task + "\"";
      line += grid ? ",\"obs_mode\":\"grid\",\"grid\":" : ",\"obs_mode\":\"oracle\",\"state_vec\":";
      detail::append_real_array(line, st.obs.flat(), grid ? "%.6g" : "%.17g");
      line += ",\"proprio\":";
      detail::append_real_array(line,
                                {st.proprio.ee_pos.x, st.proprio.ee_pos.y,
                                 st.proprio.ee_pos.z, st.proprio.gripper_open},
                                "%.17g");
      line += ",\"action\":";
      detail::append_real_array(line, detail::vec3_to_list(st.action.delta_ee), "%.17g");
      line += ",\"grip\":\"" + gripper_name(st.action.gripper) + "\"";
      line += ",\"q_obj\":";
      detail::append_real_array(line, detail::vec3_to_list(st.q_obj), "%.17g");
      line += ",\"q_ee\":";
      detail::append_real_array(line, detail::vec3_to_list(st.q_ee), "%.17g");
      line += "}";
      out << line << '\n';
    }
    nlohmann::json fl = {{"e", rec.episode_id},
                         {"scene_seed", rec.scene_seed},
                         {"terminal_tick", rec.terminal_tick},
                         {"flags",
                          {{"reach", rec.stage_flags.reach},
                           {"pick", rec.stage_flags.pick},
                           {"task", rec.stage_flags.task}}}};
    out << fl.dump() << '\n';
  }
  if (!out) throw std::runtime_error("save_demo_dataset: write failed");
}

// Loads what training needs: observations, proprio, action and aux targets.
// State snapshots are not serialized, so success_metrics cannot be re-run on
// a loaded dataset; the stored flags line carries the verdicts instead.
inline DemoDataset load_demo_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_demo_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_demo_dataset: empty file");
  const nlohmann::json hdr = nlohmann::json::parse(line);
  if (hdr.value("format_version", -1) != kDatasetFormatVersion)
    throw std::runtime_error("load_demo_dataset: unsupported format version");
  DemoDataset ds;
  ds.header.task = task_from_name(hdr.at("task").get<std::string>());
  ds.header.horizon = hdr.at("H").get<std::size_t>();
  ds.header.obs_mode =
      hdr.at("obs_mode").get<std::string>() == "grid" ? ObsMode::GridImage : ObsMode::OracleState;
  ds.header.spawn = hdr.value("spawn", "6x8");
  ds.header.generator_seed = hdr.at("seed").get<std::uint64_t>();
  ds.header.count = hdr.at("count").get<std::size_t>();
  ds.header.exec_noise = hdr.value("exec_noise", 0.0);

  EpisodeRecord cur;
  bool have_cur = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("flags")) {
      cur.scene_seed = j.at("scene_seed").get<std::uint64_t>();
      cur.terminal_tick = j.at("terminal_tick").get<std::uint64_t>();
      const auto& fl = j.at("flags");
      cur.stage_flags = {fl.at("reach").get<bool>(), fl.at("pick").get<bool>(),
                         fl.at("task").get<bool>()};
      ds.records.push_back(std::move(cur));
      cur = EpisodeRecord{};
      have_cur = false;
      continue;
    }
    if (!have_cur) {
      cur.episode_id = j.at("e").get<std::uint64_t>();
      cur.task = task_from_name(j.at("task").get<std::string>());
      cur.obs_mode = j.at("obs_mode").get<std::string>() == "grid" ? ObsMode::GridImage
                                                                   : ObsMode::OracleState;
      have_cur = true;
    }
    StepTrace st;
    st.obs.mode = cur.obs_mode;
    if (cur.obs_mode == ObsMode::GridImage) {
      st.obs.grid = TensorBuffer({kGridChannels, kGridSize, kGridSize},
                                 j.at("grid").get<std::vector<double>>());
    } else {
      st.obs.state_vec = j.at("state_vec").get<std::vector<double>>();
    }
    const auto pr = j.at("proprio").get<std::vector<double>>();
    st.proprio = {{pr[0], pr[1], pr[2]}, pr[3]};
    const auto ac = j.at("action").get<std::vector<double>>();
    st.action.delta_ee = {ac[0], ac[1], ac[2]};
    st.action.gripper = gripper_from_name(j.at("grip").get<std::string>());
    const auto qo = j.at("q_obj").get<std::vector<double>>();
    st.q_obj = {qo[0], qo[1], qo[2]};
    const auto qe = j.at("q_ee").get<std::vector<double>>();
    st.q_ee = {qe[0], qe[1], qe[2]};
    cur.steps.push_back(std::move(st));
  }
  if (have_cur) throw std::runtime_error("load_demo_dataset: truncated final episode");
  return ds;
}

}  // namespace ivmc::env
