#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivmc/common.hpp"
#include "ivmc/tensor.hpp"

namespace ivmc::env {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  double norm_xy() const { return std::sqrt(x * x + y * y); }
};

inline double dist(const Vec3& a, const Vec3& b) { return (a - b).norm(); }
inline double dist_xy(const Vec3& a, const Vec3& b) { return (a - b).norm_xy(); }

enum class Task { Pushing, PickPlace, PickReach };
enum class GripperCmd { Open, Close, NoOp };
enum class ObsMode { OracleState, GridImage };

inline std::string task_name(Task t) {
  switch (t) {
    case Task::Pushing: return "pushing";
    case Task::PickPlace: return "pick_place";
    case Task::PickReach: return "pick_reach";
  }
  return "?";
}

inline Task task_from_name(const std::string& s) {
  if (s == "pushing") return Task::Pushing;
  if (s == "pick_place") return Task::PickPlace;
  if (s == "pick_reach") return Task::PickReach;
  throw std::invalid_argument("unknown task: " + s);
}

// Workspace and interaction constants. Table is the unit square; distances
// are workspace units. Nominal tick rate 25 Hz.
inline constexpr double kMaxStep = 0.02;
inline constexpr double kZMin = 0.0, kZMax = 0.3;
inline constexpr double kGraspRadius = 0.025;
inline constexpr double kGraspHeight = 0.03;
inline constexpr double kSlewRate = 0.25;
inline constexpr double kEeRadius = 0.02;
inline constexpr double kCubeRadius = 0.02;
inline constexpr double kPushHeight = 0.03;
inline constexpr double kObjectRestZ = 0.02;
inline constexpr double kReachRadius = 0.04;
inline constexpr double kPickHeight = 0.06;
inline constexpr double kGoalRadiusXY = 0.03;
inline constexpr double kYawOffsetLimit = 0.01;
inline constexpr double kStickLength = 0.12;
inline constexpr int kSpawnRows = 6;  // y
inline constexpr int kSpawnCols = 8;  // x
inline constexpr int kGridSize = 16;
inline constexpr int kGridChannels = 3;
inline const Vec3 kHomePose{0.5, 0.5, 0.12};

struct ActionCommand {
  Vec3 delta_ee;  // clipped to kMaxStep by norm inside step()
  GripperCmd gripper = GripperCmd::NoOp;
};

inline Vec3 clip_delta(const Vec3& d) {
  const double n = d.norm();
  if (n <= kMaxStep || n == 0.0) return d;
  return d * (kMaxStep / n);
}

struct EnvState {
  Task task = Task::Pushing;
  Vec3 ee_pos;
  double gripper_open = 1.0;  // 1 fully open, 0 fully closed
  Vec3 object_pos;            // pick_reach: position of the stick grasp end
  double object_yaw = 0.0;    // pushing only, perturbation bookkeeping
  Vec3 target_pos;
  bool attached = false;
  std::uint64_t tick = 0;
  Vec3 stick_axis;            // pick_reach only, unit vector to the far end

  Vec3 stick_far_end() const { return object_pos + stick_axis * kStickLength; }
};

struct ProprioState {
  Vec3 ee_pos;
  double gripper_open = 1.0;
};

inline ProprioState proprio_of(const EnvState& s) { return {s.ee_pos, s.gripper_open}; }

struct Observation {
  ObsMode mode = ObsMode::GridImage;
  TensorBuffer grid;               // [3 x 16 x 16] when GridImage
  std::vector<double> state_vec;   // when OracleState

  const std::vector<double>& flat() const {
    return mode == ObsMode::GridImage ? grid.data : state_vec;
  }
};

inline std::size_t observation_dim(ObsMode mode) {
  return mode == ObsMode::GridImage
             ? static_cast<std::size_t>(kGridChannels * kGridSize * kGridSize)
             : 10u;
}

namespace detail {

// Quadratic B-spline bump, support |x| <= 1.5, scaled to peak 1 at 0.
// Integer-shifted sums of the unscaled spline are exactly 1, so blob mass is
// independent of sub-cell position.
inline double blob_kernel_1d(double x) {
  const double a = std::abs(x);
  if (a >= 1.5) return 0.0;
  const double b2 = (a <= 0.5) ? 0.75 - a * a : 0.5 * (1.5 - a) * (1.5 - a);
  return b2 / 0.75;
}

inline void render_blob(TensorBuffer& grid, int channel, double x, double y,
                        double peak) {
  // cell centers at ((i+0.5)/N, (j+0.5)/N)
  const double cx = x * kGridSize - 0.5;
  const double cy = y * kGridSize - 0.5;
  double* ch = grid.data.data() + static_cast<std::size_t>(channel) * kGridSize * kGridSize;
  const int x0 = static_cast<int>(std::floor(cx - 1.5));
  const int y0 = static_cast<int>(std::floor(cy - 1.5));
  for (int j = y0; j <= y0 + 4; ++j) {
    if (j < 0 || j >= kGridSize) continue;
    const double ky = blob_kernel_1d(static_cast<double>(j) - cy);
    if (ky == 0.0) continue;
    for (int i = x0; i <= x0 + 4; ++i) {
      if (i < 0 || i >= kGridSize) continue;
      const double v = peak * blob_kernel_1d(static_cast<double>(i) - cx) * ky;
      double& cell = ch[j * kGridSize + i];
      if (v > cell) cell = v;
    }
  }
}

inline Vec3 spawn_cell_center(int col, int row, double x_lo, double x_hi) {
  const double y_lo = 0.26, y_hi = 0.74;
  const double x = x_lo + (col + 0.5) * (x_hi - x_lo) / kSpawnCols;
  const double y = y_lo + (row + 0.5) * (y_hi - y_lo) / kSpawnRows;
  return {x, y, kObjectRestZ};
}

}  // namespace detail

// Deterministic scene spawn on the 6x8 grid(s).
inline EnvState reset(Task task, std::uint64_t scene_seed) {
  Rng rng(derive_seed(scene_seed, 0x7265736574ULL, static_cast<std::uint64_t>(task)));
  EnvState s;
  s.task = task;
  s.ee_pos = kHomePose;
  s.gripper_open = 1.0;
  s.attached = false;
  s.tick = 0;
  const int ncells = kSpawnRows * kSpawnCols;
  if (task == Task::PickReach) {
    // stick grasp end on the left grid, target on the right grid
    const int oc = static_cast<int>(rng.uniform_int(ncells));
    const int tc = static_cast<int>(rng.uniform_int(ncells));
    s.object_pos = detail::spawn_cell_center(oc % kSpawnCols, oc / kSpawnCols, 0.20, 0.42);
    s.target_pos = detail::spawn_cell_center(tc % kSpawnCols, tc / kSpawnCols, 0.58, 0.80);
    s.stick_axis = {1.0, 0.0, 0.0};
  } else {
    const int oc = static_cast<int>(rng.uniform_int(ncells));
    int tc = static_cast<int>(rng.uniform_int(ncells - 1));
    if (tc >= oc) ++tc;  // distinct cells
    s.object_pos = detail::spawn_cell_center(oc % kSpawnCols, oc / kSpawnCols, 0.26, 0.74);
    s.target_pos = detail::spawn_cell_center(tc % kSpawnCols, tc / kSpawnCols, 0.26, 0.74);
  }
  return s;
}

// One simulator tick. Pure function of (state, action).
inline EnvState step(const EnvState& state, const ActionCommand& action) {
  EnvState s = state;
  const Vec3 before = s.ee_pos;
  const Vec3 d = clip_delta(action.delta_ee);
  s.ee_pos = s.ee_pos + d;
  s.ee_pos.x = std::clamp(s.ee_pos.x, 0.0, 1.0);
  s.ee_pos.y = std::clamp(s.ee_pos.y, 0.0, 1.0);
  s.ee_pos.z = std::clamp(s.ee_pos.z, kZMin, kZMax);
  const Vec3 applied = s.ee_pos - before;

  // gripper slews toward the commanded class
  double grip_target = s.gripper_open;
  if (action.gripper == GripperCmd::Open) grip_target = 1.0;
  if (action.gripper == GripperCmd::Close) grip_target = 0.0;
  const double dg = std::clamp(grip_target - s.gripper_open, -kSlewRate, kSlewRate);
  s.gripper_open += dg;

  if (s.task == Task::Pushing) {
    // quasi-static push: resolve xy disc overlap when the EE is at table level
    if (s.ee_pos.z <= kPushHeight) {
      const double rsum = kEeRadius + kCubeRadius;
      Vec3 sep = s.object_pos - s.ee_pos;
      sep.z = 0.0;
      double dxy = sep.norm_xy();
      if (dxy < rsum) {
        Vec3 dir;
        if (dxy > 1e-12) {
          dir = sep * (1.0 / dxy);
        } else {
          const double an = applied.norm_xy();
          dir = an > 1e-12 ? Vec3{applied.x / an, applied.y / an, 0.0} : Vec3{1.0, 0.0, 0.0};
        }
        const double push = rsum - dxy;
        s.object_pos.x += dir.x * push;
        s.object_pos.y += dir.y * push;
        s.object_pos.x = std::clamp(s.object_pos.x, 0.0, 1.0);
        s.object_pos.y = std::clamp(s.object_pos.y, 0.0, 1.0);
        // off-center contact twists the cube; stand-in for unmodelled rotation
        const double an = applied.norm_xy();
        if (an > 1e-12) {
          const double lateral = (sep.x * applied.y - sep.y * applied.x) / an;
          if (std::abs(lateral) > kYawOffsetLimit) s.object_yaw += 0.5 * lateral;
        }
      }
    }
  } else {
    if (s.attached) {
      if (action.gripper == GripperCmd::Open) {
        s.attached = false;
        s.object_pos.z = kObjectRestZ;  // released object settles on the table
      } else {
        s.object_pos = s.ee_pos;  // rigid attachment at the grasp point
      }
    } else if (action.gripper == GripperCmd::Close &&
               dist(s.ee_pos, s.object_pos) <= kGraspRadius &&
               s.ee_pos.z <= kGraspHeight) {
      s.attached = true;
      s.object_pos = s.ee_pos;
    }
  }

  ++s.tick;
  return s;
}

// Pure rendering of the state. Grid channels: 0 = EE, 1 = object, 2 = target.
inline Observation observe(const EnvState& s, ObsMode mode) {
  Observation o;
  o.mode = mode;
  if (mode == ObsMode::OracleState) {
    o.state_vec = {s.ee_pos.x, s.ee_pos.y, s.ee_pos.z, s.gripper_open,
                   s.object_pos.x, s.object_pos.y, s.object_pos.z,
                   s.target_pos.x, s.target_pos.y, s.target_pos.z};
    return o;
  }
  o.grid = TensorBuffer({kGridChannels, kGridSize, kGridSize});
  detail::render_blob(o.grid, 0, s.ee_pos.x, s.ee_pos.y, 1.0);
  detail::render_blob(o.grid, 1, s.object_pos.x, s.object_pos.y, 1.0);
  if (s.task == Task::PickReach) {
    const Vec3 far = s.stick_far_end();
    detail::render_blob(o.grid, 1, far.x, far.y, 0.5);
  }
  detail::render_blob(o.grid, 2, s.target_pos.x, s.target_pos.y, 1.0);
  return o;
}

inline bool task_success(const EnvState& s) {
  switch (s.task) {
    case Task::Pushing:
      return dist_xy(s.object_pos, s.target_pos) <= kGoalRadiusXY;
    case Task::PickPlace:
      return !s.attached && dist_xy(s.object_pos, s.target_pos) <= kGoalRadiusXY &&
             s.object_pos.z <= kObjectRestZ + 1e-9;
    case Task::PickReach:
      return s.attached && dist(s.stick_far_end(), s.target_pos) <= kGoalRadiusXY;
  }
  return false;
}

}  // namespace ivmc::env
