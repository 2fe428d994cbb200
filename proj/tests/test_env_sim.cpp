#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "ivmc/env/dataset.hpp"
#include "ivmc/env/env.hpp"
#include "ivmc/env/expert.hpp"

using namespace ivmc;
using namespace ivmc::env;

namespace {
bool states_equal(const EnvState& a, const EnvState& b) {
  return a.ee_pos == b.ee_pos && a.gripper_open == b.gripper_open &&
         a.object_pos == b.object_pos && a.object_yaw == b.object_yaw &&
         a.target_pos == b.target_pos && a.attached == b.attached && a.tick == b.tick;
}
}  // namespace

TEST_CASE("reset is deterministic and spawns on distinct cells") {
  for (auto task : {Task::Pushing, Task::PickPlace, Task::PickReach}) {
    const EnvState a = reset(task, 42);
    const EnvState b = reset(task, 42);
    CHECK(states_equal(a, b));
    CHECK(a.ee_pos == kHomePose);
    CHECK(a.gripper_open == 1.0);
  }
  for (std::uint64_t seed = 0; seed < 48; ++seed) {
    const EnvState s = reset(Task::Pushing, seed);
    CHECK(dist_xy(s.object_pos, s.target_pos) > kGoalRadiusXY);
  }
}

TEST_CASE("spawn cell occupancy is uniform (chi-squared)") {
  std::map<std::pair<int, int>, int> counts;
  const int n = 6000;
  for (int seed = 0; seed < n; ++seed) {
    const EnvState s = reset(Task::Pushing, static_cast<std::uint64_t>(seed) + 1000);
    // invert the cell from the position
    const int col = static_cast<int>((s.object_pos.x - 0.26) / (0.48 / kSpawnCols));
    const int row = static_cast<int>((s.object_pos.y - 0.26) / (0.48 / kSpawnRows));
    counts[{col, row}]++;
  }
  REQUIRE(counts.size() == 48);
  const double expected = static_cast<double>(n) / 48.0;
  double chi2 = 0.0;
  for (auto& [cell, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 47 dof; p > 0.01 means chi2 below the 0.99 quantile (~72.44)
  CHECK(chi2 < 72.44);
}

TEST_CASE("step clips the commanded delta") {
  EnvState s = reset(Task::Pushing, 1);
  const EnvState s2 = step(s, {{0.1, 0.0, 0.0}, GripperCmd::NoOp});
  CHECK(s2.ee_pos.x - s.ee_pos.x == Catch::Approx(kMaxStep).margin(1e-15));
  CHECK(s2.ee_pos.y == s.ee_pos.y);
}

TEST_CASE("step is pure and displacement norm is bounded") {
  Rng rng(77);
  EnvState s = reset(Task::PickPlace, 3);
  for (int i = 0; i < 200; ++i) {
    ActionCommand a{{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                     rng.uniform(-0.05, 0.05)},
                    static_cast<GripperCmd>(rng.uniform_int(3))};
    const EnvState n1 = step(s, a);
    const EnvState n2 = step(s, a);
    CHECK(states_equal(n1, n2));
    CHECK((n1.ee_pos - s.ee_pos).norm() <= kMaxStep + 1e-12);
    CHECK(n1.ee_pos.x >= 0.0);
    CHECK(n1.ee_pos.x <= 1.0);
    CHECK(n1.ee_pos.z >= kZMin);
    CHECK(n1.ee_pos.z <= kZMax);
    s = n1;
  }
}

TEST_CASE("attached object follows the EE rigidly") {
  EnvState s = reset(Task::PickPlace, 5);
  // teleport-free grasp setup: walk the EE to the object
  for (int i = 0; i < 500 && !s.attached; ++i) {
    const Vec3 d = clip_delta(s.object_pos - s.ee_pos);
    s = step(s, {d, dist(s.ee_pos, s.object_pos) < 0.04 ? GripperCmd::Close : GripperCmd::NoOp});
  }
  REQUIRE(s.attached);
  CHECK(dist(s.ee_pos, s.object_pos) == 0.0);
  for (int i = 0; i < 20; ++i) {
    const Vec3 before_obj = s.object_pos;
    const Vec3 before_ee = s.ee_pos;
    const EnvState n = step(s, {{0.01, -0.004, 0.011}, GripperCmd::Close});
    const Vec3 dee = n.ee_pos - before_ee;
    const Vec3 dobj = n.object_pos - before_obj;
    CHECK(dee.x == dobj.x);
    CHECK(dee.y == dobj.y);
    CHECK(dee.z == dobj.z);
    s = n;
  }
  // release drops the object to the table
  const EnvState rel = step(s, {{0, 0, 0}, GripperCmd::Open});
  CHECK_FALSE(rel.attached);
  CHECK(rel.object_pos.z == kObjectRestZ);
}

TEST_CASE("straight sweep through the cube pushes it with zero lateral drift") {
  EnvState s = reset(Task::Pushing, 7);
  // place EE behind the cube on its -x side, at table height, same y
  s.ee_pos = {s.object_pos.x - 0.08, s.object_pos.y, 0.02};
  const double y0 = s.object_pos.y;
  for (int i = 0; i < 30; ++i) s = step(s, {{0.02, 0.0, 0.0}, GripperCmd::NoOp});
  CHECK(s.object_pos.x > reset(Task::Pushing, 7).object_pos.x + 0.1);
  CHECK(s.object_pos.y == Catch::Approx(y0).margin(1e-12));
  CHECK(s.object_yaw == 0.0);
}

TEST_CASE("off-center push perturbs the yaw") {
  EnvState s = reset(Task::Pushing, 7);
  s.ee_pos = {s.object_pos.x - 0.08, s.object_pos.y + 0.015, 0.02};
  for (int i = 0; i < 30; ++i) s = step(s, {{0.02, 0.0, 0.0}, GripperCmd::NoOp});
  CHECK(s.object_yaw != 0.0);
}

TEST_CASE("observation purity and blob rendering") {
  EnvState s = reset(Task::Pushing, 11);
  const Observation a = observe(s, ObsMode::GridImage);
  const Observation b = observe(s, ObsMode::GridImage);
  CHECK(a.grid.data == b.grid.data);
  for (double v : a.grid.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // entity exactly on a cell center peaks at 1.0
  s.object_pos = {(7 + 0.5) / kGridSize, (9 + 0.5) / kGridSize, kObjectRestZ};
  const Observation o = observe(s, ObsMode::GridImage);
  const double* ch1 = o.grid.data.data() + kGridSize * kGridSize;
  CHECK(ch1[9 * kGridSize + 7] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("blob mass is constant under translation") {
  EnvState s = reset(Task::Pushing, 13);
  double ref_mass = -1.0;
  for (int i = 0; i < 40; ++i) {
    s.object_pos = {0.3 + 0.01 * i, 0.41 + 0.0037 * i, kObjectRestZ};
    const Observation o = observe(s, ObsMode::GridImage);
    double mass = 0.0;
    const double* ch1 = o.grid.data.data() + kGridSize * kGridSize;
    for (int j = 0; j < kGridSize * kGridSize; ++j) mass += ch1[j];
    if (ref_mass < 0) ref_mass = mass;
    CHECK(mass == Catch::Approx(ref_mass).epsilon(0.02));
  }
}

TEST_CASE("expert converged at goal emits no-op") {
  // pushing expert parked once the cube sits on the target
  EnvState s = reset(Task::Pushing, 17);
  s.object_pos = s.target_pos;
  const ActionCommand a = expert_action(s, Task::Pushing);
  CHECK(a.delta_ee.norm() < 1e-12);
  CHECK(a.gripper == GripperCmd::NoOp);
}

TEST_CASE("experts succeed from (almost) all spawns") {
  for (auto task : {Task::Pushing, Task::PickPlace, Task::PickReach}) {
    int ok = 0;
    const int n = 100;
    for (int i = 0; i < n; ++i) {
      auto rec = run_expert_episode(task, 10000 + i, 200, ObsMode::GridImage);
      if (rec) ++ok;
    }
    INFO("task " << task_name(task));
    CHECK(ok >= 99);
  }
}

TEST_CASE("pushing expert path has two dominant orthogonal segments") {
  auto rec = run_expert_episode(Task::Pushing, 555, 200, ObsMode::GridImage);
  REQUIRE(rec);
  // histogram of xy motion directions over pushing-contact ticks
  int along_x = 0, along_y = 0, other = 0;
  for (const auto& st : rec->steps) {
    const Vec3& d = st.applied_delta;
    if (d.norm_xy() < 1e-4 || st.state_before.ee_pos.z > kPushHeight) continue;
    const double ang = std::atan2(std::abs(d.y), std::abs(d.x));
    if (ang < 10.0 * kPi / 180.0) ++along_x;
    else if (ang > 80.0 * kPi / 180.0) ++along_y;
    else ++other;
  }
  const int total = along_x + along_y + other;
  REQUIRE(total > 10);
  CHECK(along_x > 0);
  CHECK(along_y > 0);
  CHECK(static_cast<double>(other) / total < 0.25);
}

TEST_CASE("success metrics") {
  SECTION("expert episode sets all flags") {
    auto rec = run_expert_episode(Task::PickPlace, 999, 200, ObsMode::GridImage);
    REQUIRE(rec);
    CHECK(rec->stage_flags.reach);
    CHECK(rec->stage_flags.pick);
    CHECK(rec->stage_flags.task);
    // offline re-scan matches the stored flags
    CHECK(success_metrics(*rec) == rec->stage_flags);
  }
  SECTION("empty motion sets no flags") {
    EnvState s = reset(Task::PickPlace, 31);
    EpisodeRecord rec;
    rec.task = Task::PickPlace;
    for (int t = 0; t < 50; ++t) {
      StepTrace st;
      st.state_before = s;
      st.proprio = proprio_of(s);
      s = step(s, {{0, 0, 0}, GripperCmd::NoOp});
      rec.steps.push_back(st);
    }
    rec.final_state = s;
    const StageFlags f = success_metrics(rec);
    CHECK_FALSE(f.reach);
    CHECK_FALSE(f.pick);
    CHECK_FALSE(f.task);
  }
  SECTION("stage monotonicity on expert episodes") {
    for (int i = 0; i < 20; ++i) {
      for (auto task : {Task::PickPlace, Task::PickReach}) {
        auto rec = run_expert_episode(task, 2000 + i, 200, ObsMode::GridImage);
        if (!rec) continue;
        const StageFlags f = success_metrics(*rec);
        if (f.pick) CHECK(f.reach);
        if (f.task) CHECK(f.pick);
      }
    }
  }
}

TEST_CASE("demo generation and dataset round-trip") {
  const auto tmp = std::filesystem::temp_directory_path();
  const std::string p1 = (tmp / "ivmc_demo_a.jsonl").string();
  const std::string p2 = (tmp / "ivmc_demo_b.jsonl").string();

  const DemoDataset ds = generate_demos(Task::PickPlace, 5, 123, ObsMode::GridImage, 100);
  REQUIRE(ds.records.size() == 5);
  for (const auto& rec : ds.records) {
    CHECK(rec.stage_flags.task);
    CHECK(rec.steps.size() <= 100);
    // kinematic lower bound: the EE must cover at least the spawn distance
    const EnvState s0 = reset(Task::PickPlace, rec.scene_seed);
    const double min_ticks = dist(s0.ee_pos, s0.object_pos) / kMaxStep;
    CHECK(static_cast<double>(rec.steps.size()) >= min_ticks);
  }

  save_demo_dataset(ds, p1);
  const DemoDataset ds2 = generate_demos(Task::PickPlace, 5, 123, ObsMode::GridImage, 100);
  save_demo_dataset(ds2, p2);
  CHECK(file_checksum(p1) == file_checksum(p2));

  const DemoDataset loaded = load_demo_dataset(p1);
  REQUIRE(loaded.records.size() == 5);
  CHECK(loaded.header.task == Task::PickPlace);
  CHECK(loaded.records[2].steps.size() == ds.records[2].steps.size());
  CHECK(loaded.records[2].scene_seed == ds.records[2].scene_seed);
  // non-grid reals round-trip exactly; grid at 6 significant digits
  const auto& a = ds.records[2].steps[5];
  const auto& b = loaded.records[2].steps[5];
  CHECK(a.action.delta_ee == b.action.delta_ee);
  CHECK(a.proprio.ee_pos == b.proprio.ee_pos);
  for (std::size_t i = 0; i < a.obs.grid.data.size(); ++i)
    CHECK(b.obs.grid.data[i] == Catch::Approx(a.obs.grid.data[i]).margin(1e-5));

  std::filesystem::remove(p1);
  std::filesystem::remove(p2);

  CHECK_THROWS(generate_demos(Task::Pushing, 0, 1, ObsMode::GridImage));
}
