#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace modbot::design {

struct DesignError : std::runtime_error {
  explicit DesignError(const std::string& what) : std::runtime_error(what) {}
};

enum class ModuleKind { kBody, kLeg, kWheel };

const char* kind_name(ModuleKind k);
int joints_of(ModuleKind k);  // body 0, leg 2 (hip, knee), wheel 1 (axle)

// Shared geometry of every module family, in meters / radians.
namespace geom {
constexpr double kBodyLength = 1.0;
constexpr double kThighLength = 0.15;
constexpr double kShankLength = 0.15;
constexpr double kWheelRadius = 0.08;
constexpr double kModuleMass = 1.0;
constexpr double kHipLimit = 1.5;
constexpr double kKneeLimit = 2.5;
constexpr double kJointVelLimit = 6.0;
constexpr double kStanceHeight = 0.25;
// Knee bend that puts the foot kStanceHeight below the hip with the hip
// centered (symmetric two-link chain, leg length 2 l cos(knee / 2)).
inline double nominal_knee() {
  return 2.0 * std::acos(kStanceHeight / (kThighLength + kShankLength));
}
}  // namespace geom

struct ModuleNode {
  ModuleKind kind = ModuleKind::kBody;
  double attachment_x = 0.0;  // along the body axis, body frame

  bool operator==(const ModuleNode&) const = default;
};

// Star graph: one body at node 0, limbs attached to it. Limbs are kept in
// canonical order (attachment_x, then kind) so node ids are deterministic.
struct DesignGraph {
  std::string name;
  double body_length = geom::kBodyLength;
  std::vector<ModuleNode> nodes;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int limb_count() const { return node_count() - 1; }
  int joint_count() const;
  // Index of the first joint of the given node in the flat joint vector.
  // Joints are laid out per limb in node order (hip, knee for legs).
  int joint_offset(int node) const;

  bool operator==(const DesignGraph&) const = default;
};

// Sorts limbs into canonical order and validates the graph invariants.
DesignGraph make_design(std::string name, double body_length, std::vector<ModuleNode> limbs);

// Text format, one declaration per line, '#' comments:
//   body length=<f>
//   limb kind=<leg|wheel> x=<f>
DesignGraph parse_design(const std::string& text, const std::string& name);
std::string serialize(const DesignGraph& d);

const std::vector<DesignGraph>& builtin_train_designs();
const std::vector<DesignGraph>& builtin_test_designs();

// Per-joint nominal angles (zero hips, bent knees; wheel entries zero) and
// the weight of each joint in the stance-deviation penalty (wheels exempt).
std::vector<double> nominal_stance(const DesignGraph& d);
std::vector<double> stance_weight(const DesignGraph& d);

// Per-joint position limits; wheels are unbounded.
std::vector<double> joint_lower_limits(const DesignGraph& d);
std::vector<double> joint_upper_limits(const DesignGraph& d);

// Multiset of (kind, attachment) pairs, used to compare structures.
std::vector<std::pair<int, double>> structure_key(const DesignGraph& d);

}  // namespace modbot::design
