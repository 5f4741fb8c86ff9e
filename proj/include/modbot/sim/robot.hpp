#pragma once

#include <array>
#include <vector>

#include "modbot/design/design.hpp"
#include "modbot/sim/terrain.hpp"
#include "modbot/util/rng.hpp"

namespace modbot::sim {

constexpr int kSubsteps = 5;
constexpr double kSubstepDt = 1.0 / 60.0;
constexpr double kControlDt = kSubsteps * kSubstepDt;
constexpr double kTrackingAlpha = 0.5;
constexpr double kTorqueScale = 1.0;
constexpr double kContactBand = 0.001;
constexpr double kGravity = 9.81;
constexpr double kPitchRelaxRate = 5.0;
constexpr double kFailureDepth = 0.05;
constexpr double kFailurePitch = 1.2;

struct NoiseModel {
  double sigma_angle = 0.01;
  double sigma_rate = 0.05;
  double sigma_height = 0.01;
};

struct RewardWeights {
  double pitch = 0.05;
  double effort = 0.001;
  double stance = 0.01;
  double failure = 2.0;
};

struct RobotState {
  double x = 0.0;
  double z = 0.0;
  double pitch = 0.0;
  double xdot = 0.0;
  double zdot = 0.0;
  double pitch_rate = 0.0;
  std::vector<double> q;
  std::vector<double> qd;
  std::vector<double> pending_action;  // applied on the next control step
  bool failed = false;
};

// Flat vector view used by datasets and the learned model:
// [x, z, pitch, xdot, zdot, pitch_rate, q0, qd0, q1, qd1, ...].
constexpr int kBodyStateDim = 6;
int state_dim(const design::DesignGraph& d);
std::vector<double> state_vector(const RobotState& s);
RobotState state_from_vector(const design::DesignGraph& d, const std::vector<double>& v);

struct Endpoint {
  int node = 0;  // design node id
  design::ModuleKind kind = design::ModuleKind::kLeg;
  double x = 0.0;
  double z = 0.0;
  double rel_xvel = 0.0;  // joint-driven x velocity relative to the body
};

// Ground-contact candidates: leg feet and wheel rims, in limb order.
std::vector<Endpoint> contact_endpoints(const RobotState& s, const design::DesignGraph& d);

struct StepResult {
  RobotState state;
  std::vector<double> torque;  // tracking residual per joint, substep average
};

// Advances one control step (5 substeps). The action executed during this
// call is s.pending_action; `a` becomes the new pending action.
StepResult step(const RobotState& s, const std::vector<double>& a, const Heightfield& hf,
                const design::DesignGraph& d);

struct Observation {
  double pitch = 0.0;
  double pitch_rate = 0.0;
  std::vector<double> q;
  std::vector<double> qd;
  std::array<double, kWindowSize> window{};
};

// spoof_flat replaces the terrain slice with the flat-ground constant
// (-stance height) while consuming the same noise draws.
Observation observe(const RobotState& s, const Heightfield& hf, const design::DesignGraph& d,
                    util::Rng& rng, const NoiseModel& noise = NoiseModel{},
                    bool spoof_flat = false);

// Progress minus pitch, effort, stance-deviation, and fresh-failure penalties.
// The effort proxy is a - qd_next (the command-tracking residual).
double reward(const RobotState& s, const RobotState& s_next, const std::vector<double>& a,
              const design::DesignGraph& d, const RewardWeights& w = RewardWeights{});

// Body at x = 0 resting at stance height above the local ground, joints at
// nominal stance with seeded perturbations (+/-0.02 rad joints, +/-0.05 pitch).
RobotState reset(const design::DesignGraph& d, const Heightfield& hf, uint64_t perturb_seed);
RobotState reset(const design::DesignGraph& d, uint64_t perturb_seed);

}  // namespace modbot::sim
