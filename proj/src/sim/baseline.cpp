#include "modbot/sim/baseline.hpp"

#include <algorithm>
#include <cmath>

namespace modbot::sim {
namespace {

using design::ModuleKind;
namespace geom = design::geom;

constexpr double kWheelDrive =
    (kGaitStride / ((kGaitPeriod / 2) * kControlDt)) / geom::kWheelRadius;

struct JointTargets {
  double hip;
  double knee;
};

// Two-link inverse kinematics for a foot target relative to the attachment.
JointTargets leg_ik(FootTarget ft) {
  const double max_len = 2.0 * geom::kThighLength;
  double r = std::sqrt(ft.x * ft.x + ft.z * ft.z);
  r = std::min(r, max_len * 0.999);
  JointTargets jt;
  jt.hip = std::atan2(ft.x, -ft.z);
  jt.knee = 2.0 * std::acos(std::min(1.0, r / max_len));
  jt.hip = std::clamp(jt.hip, -geom::kHipLimit, geom::kHipLimit);
  jt.knee = std::clamp(jt.knee, -geom::kKneeLimit, geom::kKneeLimit);
  return jt;
}

}  // namespace

FootTarget baseline_foot_target(int phase_step, double swing_height) {
  const int p = ((phase_step % kGaitPeriod) + kGaitPeriod) % kGaitPeriod;
  const int half = kGaitPeriod / 2;
  const double half_stride = kGaitStride / 2.0;
  FootTarget ft;
  if (p < half) {
    // Stance: sweep the foot backward along the ground.
    const double s = static_cast<double>(p) / half;
    ft.x = half_stride - kGaitStride * s;
    ft.z = -geom::kStanceHeight;
    return ft;
  }
  const double w = static_cast<double>(p - half) / half;  // swing progress in [0, 1)
  const double lift = geom::kStanceHeight - swing_height;
  if (w < 1.0 / 3.0) {
    ft.x = -half_stride;
    ft.z = -geom::kStanceHeight + swing_height * (3.0 * w);
  } else if (w < 2.0 / 3.0) {
    ft.x = -half_stride + kGaitStride * (3.0 * w - 1.0);
    ft.z = -lift;
  } else {
    ft.x = half_stride;
    ft.z = -geom::kStanceHeight + swing_height * (3.0 - 3.0 * w);
  }
  return ft;
}

std::vector<double> tripod_baseline(const RobotState& s, int t, const design::DesignGraph& d,
                                    double feature_height) {
  const double swing =
      std::clamp(1.1 * feature_height, kMinSwingHeight, kMaxSwingHeight);
  std::vector<double> a(d.joint_count(), 0.0);
  int leg_index = 0;
  for (int i = 1; i < d.node_count(); ++i) {
    const int off = d.joint_offset(i);
    if (d.nodes[i].kind == ModuleKind::kWheel) {
      a[off] = kWheelDrive;
      continue;
    }
    const int phase = t + (leg_index++ % 2) * (kGaitPeriod / 2);
    const auto jt = leg_ik(baseline_foot_target(phase, swing));
    a[off] = std::clamp((jt.hip - s.q[off]) / kControlDt, -geom::kJointVelLimit,
                        geom::kJointVelLimit);
    a[off + 1] = std::clamp((jt.knee - s.q[off + 1]) / kControlDt, -geom::kJointVelLimit,
                            geom::kJointVelLimit);
  }
  return a;
}

}  // namespace modbot::sim
