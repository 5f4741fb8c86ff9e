#include "modbot/sim/robot.hpp"

#include <algorithm>
#include <cmath>

namespace modbot::sim {
namespace {

using design::DesignGraph;
using design::ModuleKind;
namespace geom = design::geom;

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

int state_dim(const DesignGraph& d) { return kBodyStateDim + 2 * d.joint_count(); }

std::vector<double> state_vector(const RobotState& s) {
  std::vector<double> v;
  v.reserve(kBodyStateDim + 2 * s.q.size());
  v.insert(v.end(), {s.x, s.z, s.pitch, s.xdot, s.zdot, s.pitch_rate});
  for (size_t j = 0; j < s.q.size(); ++j) {
    v.push_back(s.q[j]);
    v.push_back(s.qd[j]);
  }
  return v;
}

RobotState state_from_vector(const DesignGraph& d, const std::vector<double>& v) {
  const int nj = d.joint_count();
  RobotState s;
  s.x = v[0];
  s.z = v[1];
  s.pitch = v[2];
  s.xdot = v[3];
  s.zdot = v[4];
  s.pitch_rate = v[5];
  s.q.resize(nj);
  s.qd.resize(nj);
  for (int j = 0; j < nj; ++j) {
    s.q[j] = v[kBodyStateDim + 2 * j];
    s.qd[j] = v[kBodyStateDim + 2 * j + 1];
  }
  s.pending_action.assign(nj, 0.0);
  return s;
}

std::vector<Endpoint> contact_endpoints(const RobotState& s, const DesignGraph& d) {
  std::vector<Endpoint> out;
  out.reserve(d.limb_count());
  const double ct = std::cos(s.pitch);
  const double st = std::sin(s.pitch);
  for (int i = 1; i < d.node_count(); ++i) {
    const auto& node = d.nodes[i];
    const double ax = s.x + node.attachment_x * ct;
    const double az = s.z + node.attachment_x * st;
    Endpoint e;
    e.node = i;
    e.kind = node.kind;
    if (node.kind == ModuleKind::kWheel) {
      const int j = d.joint_offset(i);
      e.x = ax;
      e.z = az - geom::kWheelRadius;
      e.rel_xvel = s.qd[j] * geom::kWheelRadius;  // rim speed, rolling convention
    } else {
      const int j = d.joint_offset(i);
      const double hip = s.q[j];
      const double knee = s.q[j + 1];
      const double hip_rate = s.qd[j];
      const double knee_rate = s.qd[j + 1];
      // Symmetric two-link chain: leg length 2 l cos(knee / 2), direction
      // `hip` radians from body-down.
      const double len = 2.0 * geom::kThighLength * std::cos(knee / 2.0);
      const double len_rate = -geom::kThighLength * std::sin(knee / 2.0) * knee_rate;
      const double dir = s.pitch + hip;
      e.x = ax + len * std::sin(dir);
      e.z = az - len * std::cos(dir);
      e.rel_xvel = len_rate * std::sin(dir) + len * std::cos(dir) * hip_rate;
    }
    out.push_back(e);
  }
  return out;
}

StepResult step(const RobotState& s, const std::vector<double>& a, const Heightfield& hf,
                const DesignGraph& d) {
  const int nj = d.joint_count();
  const auto lo = design::joint_lower_limits(d);
  const auto hi = design::joint_upper_limits(d);
  std::vector<double> zero_action;
  const std::vector<double>* u_ptr = &s.pending_action;
  if (s.pending_action.empty()) {
    zero_action.assign(nj, 0.0);
    u_ptr = &zero_action;
  }
  const std::vector<double>& u = *u_ptr;

  RobotState n = s;
  if (static_cast<int>(n.q.size()) != nj) n.q.assign(nj, 0.0);
  if (static_cast<int>(n.qd.size()) != nj) n.qd.assign(nj, 0.0);
  std::vector<double> torque(nj, 0.0);

  for (int sub = 0; sub < kSubsteps && !n.failed; ++sub) {
    for (int j = 0; j < nj; ++j) {
      n.qd[j] += kTrackingAlpha * (u[j] - n.qd[j]);
      n.qd[j] = clamp(n.qd[j], -geom::kJointVelLimit, geom::kJointVelLimit);
      n.q[j] = clamp(n.q[j] + n.qd[j] * kSubstepDt, lo[j], hi[j]);
      torque[j] += kTorqueScale * (u[j] - n.qd[j]);
    }

    const auto eps = contact_endpoints(n, d);
    double lo_ground = 0.0, hi_ground = 0.0;
    double lo_x = 0.0, hi_x = 0.0;
    bool any_contact = false;
    double leg_vel_sum = 0.0, wheel_vel_sum = 0.0;
    int leg_count = 0, wheel_count = 0;
    for (const auto& e : eps) {
      const double ground = hf.height(e.x);
      if (e.z > ground + kContactBand) continue;
      if (!any_contact || ground < lo_ground) {
        lo_ground = ground;
        lo_x = e.x;
      }
      if (!any_contact || ground > hi_ground) {
        hi_ground = ground;
        hi_x = e.x;
      }
      any_contact = true;
      if (e.kind == ModuleKind::kLeg) {
        leg_vel_sum += e.rel_xvel;
        ++leg_count;
      } else {
        wheel_vel_sum += e.rel_xvel;
        ++wheel_count;
      }
    }

    if (any_contact) {
      n.xdot = (leg_count > 0 ? -leg_vel_sum / leg_count : 0.0) +
               (wheel_count > 0 ? wheel_vel_sum / wheel_count : 0.0);
      n.zdot = 0.0;
      double slope = 0.0;
      if (std::abs(hi_x - lo_x) > 1e-9) slope = std::atan((hi_ground - lo_ground) / (hi_x - lo_x));
      n.pitch_rate = kPitchRelaxRate * (slope - n.pitch);
      n.pitch += n.pitch_rate * kSubstepDt;
      n.x += n.xdot * kSubstepDt;
      // Re-evaluate contacts at the moved pose, then settle the body so the
      // deepest in-band endpoint rests exactly on the surface.
      double max_pen = -1e300;
      for (const auto& e : contact_endpoints(n, d)) {
        const double ground = hf.height(e.x);
        if (e.z > ground + kContactBand) continue;
        max_pen = std::max(max_pen, ground - e.z);
      }
      if (max_pen > -1e300) n.z += max_pen;
    } else {
      n.zdot -= kGravity * kSubstepDt;
      n.z += n.zdot * kSubstepDt;
      n.x += n.xdot * kSubstepDt;
      n.pitch_rate = 0.0;
    }

    if (n.z < hf.height(n.x) - kFailureDepth || std::abs(n.pitch) > kFailurePitch)
      n.failed = true;
  }

  for (int j = 0; j < nj; ++j) torque[j] /= kSubsteps;
  n.pending_action = a;
  return StepResult{std::move(n), std::move(torque)};
}

Observation observe(const RobotState& s, const Heightfield& hf, const DesignGraph& d,
                    util::Rng& rng, const NoiseModel& noise, bool spoof_flat) {
  Observation o;
  o.pitch = s.pitch + rng.gaussian(0.0, noise.sigma_angle);
  o.pitch_rate = s.pitch_rate + rng.gaussian(0.0, noise.sigma_rate);
  const int nj = d.joint_count();
  o.q.resize(nj);
  o.qd.resize(nj);
  for (int j = 0; j < nj; ++j) o.q[j] = s.q[j] + rng.gaussian(0.0, noise.sigma_angle);
  for (int j = 0; j < nj; ++j) o.qd[j] = s.qd[j] + rng.gaussian(0.0, noise.sigma_rate);
  const auto window = terrain_window(hf, s.x, s.z);
  for (int i = 0; i < kWindowSize; ++i) {
    const double base = spoof_flat ? -design::geom::kStanceHeight : window[i];
    o.window[i] = base + rng.gaussian(0.0, noise.sigma_height);
  }
  return o;
}

double reward(const RobotState& s, const RobotState& s_next, const std::vector<double>& a,
              const DesignGraph& d, const RewardWeights& w) {
  const auto q_nom = design::nominal_stance(d);
  const auto mask = design::stance_weight(d);
  double effort = 0.0;
  double stance = 0.0;
  for (int j = 0; j < d.joint_count(); ++j) {
    const double tau = a[j] - s_next.qd[j];
    effort += tau * tau;
    const double dev = s_next.q[j] - q_nom[j];
    stance += mask[j] * dev * dev;
  }
  double r = (s_next.x - s.x) - w.pitch * s_next.pitch * s_next.pitch - w.effort * effort -
             w.stance * stance;
  if (s_next.failed && !s.failed) r -= w.failure;
  return r;
}

RobotState reset(const DesignGraph& d, const Heightfield& hf, uint64_t perturb_seed) {
  util::Rng rng(perturb_seed);
  RobotState s;
  s.x = 0.0;
  s.z = hf.height(0.0) + geom::kStanceHeight;
  s.pitch = rng.uniform(-0.05, 0.05);
  s.q = design::nominal_stance(d);
  for (auto& qj : s.q) qj += rng.uniform(-0.02, 0.02);
  s.qd.assign(d.joint_count(), 0.0);
  s.pending_action.assign(d.joint_count(), 0.0);
  return s;
}

RobotState reset(const DesignGraph& d, uint64_t perturb_seed) {
  static const Heightfield flat = make_terrain(TerrainKind::kFlat, 0, 0);
  return reset(d, flat, perturb_seed);
}

}  // namespace modbot::sim
