#pragma once

#include <vector>

#include "modbot/design/design.hpp"
#include "modbot/sim/robot.hpp"

namespace modbot::sim {

constexpr int kGaitPeriod = 40;       // control steps per full foot cycle
constexpr double kGaitStride = 0.2;   // meters swept per cycle
constexpr double kMinSwingHeight = 0.05;
constexpr double kMaxSwingHeight = 0.15;  // keeps the foot target reachable

struct FootTarget {
  double x = 0.0;  // relative to the attachment, body frame
  double z = 0.0;
};

// Rectangular foot cycle: back-sweep at stance depth for the first half
// period, then lift / forward / lower thirds at the given swing height.
FootTarget baseline_foot_target(int phase_step, double swing_height);

// Alternating gait: legs follow the rectangle with half-period offsets by
// limb station (hexapod-style), wheels drive at the stride speed.
std::vector<double> tripod_baseline(const RobotState& s, int t, const design::DesignGraph& d,
                                    double feature_height);

}  // namespace modbot::sim
