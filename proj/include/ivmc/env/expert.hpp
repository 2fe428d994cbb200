#pragma once

#include <cmath>
#include <stdexcept>

#include "ivmc/env/env.hpp"

namespace ivmc::env {

// Scripted waypoint experts, one per task. All are pure functions of the
// current state so replay needs no controller object.

namespace detail {

inline constexpr double kWaypointTol = 0.01;
inline constexpr double kTransitZ = 0.10;
inline constexpr double kCarryZ = 0.15;
inline constexpr double kContactSum = kEeRadius + kCubeRadius;

inline Vec3 toward(const Vec3& from, const Vec3& to) { return clip_delta(to - from); }

// Two-stage rectangular push: align y behind the cube, then swing around and
// push sideways along x onto the target.
inline ActionCommand expert_pushing(const EnvState& s) {
  const Vec3& o = s.object_pos;
  const Vec3& t = s.target_pos;
  const Vec3& ee = s.ee_pos;

  const bool align_y = std::abs(o.y - t.y) > 0.01;
  // unit push direction and remaining distance for the active stage
  double dirx = 0.0, diry = 0.0, remaining = 0.0;
  if (align_y) {
    diry = (t.y > o.y) ? 1.0 : -1.0;
    remaining = std::abs(t.y - o.y);
  } else {
    if (std::abs(o.x - t.x) <= 0.015) return {Vec3{}, GripperCmd::NoOp};  // parked
    dirx = (t.x > o.x) ? 1.0 : -1.0;
    remaining = std::abs(t.x - o.x);
  }

  // lateral offset from the push line and progress along it (EE behind cube)
  const double lateral = align_y ? (ee.x - o.x) : (ee.y - o.y);
  const double behind = align_y ? diry * (o.y - ee.y) : dirx * (o.x - ee.x);
  const bool in_position =
      std::abs(lateral) <= 0.008 && behind >= kContactSum - 0.025 &&
      behind <= kContactSum + 0.035 && ee.z <= kPushHeight - 0.004;

  if (in_position) {
    // chase a point inside the cube; the penetration depth sets the push
    // speed and tapers to the remaining distance to avoid overshoot
    const double depth = std::min(kMaxStep, remaining);
    Vec3 wp = o;
    if (align_y) wp.y -= diry * (kContactSum - depth);
    else wp.x -= dirx * (kContactSum - depth);
    wp.z = 0.02;
    return {toward(ee, wp), GripperCmd::NoOp};
  }

  // approach point clear behind the cube for the active stage
  Vec3 approach = o;
  if (align_y) approach.y -= diry * (kContactSum + 0.02);
  else approach.x -= dirx * (kContactSum + 0.02);
  approach.z = 0.02;

  if (dist_xy(ee, approach) > 0.006) {
    // transit above push height so the cube is never disturbed en route
    Vec3 wp = approach;
    wp.z = kTransitZ;
    if (ee.z < kTransitZ - kWaypointTol && dist_xy(ee, approach) > 0.02)
      return {toward(ee, Vec3{ee.x, ee.y, kTransitZ}), GripperCmd::NoOp};
    return {toward(ee, wp), GripperCmd::NoOp};
  }
  return {toward(ee, approach), GripperCmd::NoOp};  // descend
}

// Shared pick phase: hover above the grasp point, descend, close.
inline ActionCommand expert_pick(const EnvState& s, const Vec3& grasp) {
  const Vec3& ee = s.ee_pos;
  if (dist_xy(ee, grasp) > 0.005) {
    Vec3 hover{grasp.x, grasp.y, kTransitZ};
    if (ee.z < kTransitZ - kWaypointTol && dist_xy(ee, grasp) > 0.03)
      return {toward(ee, Vec3{ee.x, ee.y, kTransitZ}), GripperCmd::NoOp};
    return {toward(ee, hover), GripperCmd::NoOp};
  }
  const GripperCmd g = (dist(ee, grasp) <= 0.04) ? GripperCmd::Close : GripperCmd::NoOp;
  return {toward(ee, grasp), g};
}

inline ActionCommand expert_pick_place(const EnvState& s) {
  const Vec3& o = s.object_pos;
  const Vec3& t = s.target_pos;
  const Vec3& ee = s.ee_pos;
  if (!s.attached) {
    if (dist_xy(o, t) <= kGoalRadiusXY && o.z <= kObjectRestZ + 1e-9 && s.tick > 0)
      return {Vec3{}, GripperCmd::NoOp};  // placed
    return expert_pick(s, o);
  }
  if (dist_xy(ee, t) <= 0.005 && ee.z >= kCarryZ - kWaypointTol)
    return {Vec3{}, GripperCmd::Open};  // drop onto the target
  if (ee.z < kCarryZ - kWaypointTol)
    return {toward(ee, Vec3{ee.x, ee.y, kCarryZ}), GripperCmd::Close};
  return {toward(ee, Vec3{t.x, t.y, kCarryZ}), GripperCmd::Close};
}

inline ActionCommand expert_pick_reach(const EnvState& s) {
  const Vec3& t = s.target_pos;
  const Vec3& ee = s.ee_pos;
  if (!s.attached) return expert_pick(s, s.object_pos);
  // goal EE pose puts the far end of the stick on the target
  const Vec3 goal = t - s.stick_axis * kStickLength;
  if (dist_xy(ee, goal) > 0.005) {
    if (ee.z < kCarryZ - kWaypointTol)
      return {toward(ee, Vec3{ee.x, ee.y, kCarryZ}), GripperCmd::Close};
    return {toward(ee, Vec3{goal.x, goal.y, kCarryZ}), GripperCmd::Close};
  }
  return {toward(ee, goal), GripperCmd::Close};  // descend until the far end reaches
}

}  // namespace detail

inline ActionCommand expert_action(const EnvState& state, Task task) {
  if (state.task != task) throw std::invalid_argument("expert_action: task mismatch");
  switch (task) {
    case Task::Pushing: return detail::expert_pushing(state);
    case Task::PickPlace: return detail::expert_pick_place(state);
    case Task::PickReach: return detail::expert_pick_reach(state);
  }
  return {};
}

}  // namespace ivmc::env
