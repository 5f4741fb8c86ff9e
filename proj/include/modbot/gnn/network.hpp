#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "modbot/design/design.hpp"
#include "modbot/diff/ops.hpp"
#include "modbot/diff/param_store.hpp"
#include "modbot/sim/robot.hpp"

namespace modbot::gnn {

struct GnnError : std::runtime_error {
  explicit GnnError(const std::string& what) : std::runtime_error(what) {}
};

// One parameter set per network role; instances of a module kind share the
// role's parameters at every node of every design.
enum class Role { kPolicy, kModel, kTorque };
const char* role_name(Role role);

struct NetConfig {
  int hidden = 64;      // per-node hidden width
  int enc_hidden = 64;  // encoder/decoder hidden layer width
  int rounds = 1;       // message-passing rounds per control step
};

// Raw input slices are rescaled to roughly unit range before encoding.
namespace scales {
inline constexpr double kLegAngle = 1.0;
inline constexpr double kWheelAngle = 1.0 / 30.0;
inline constexpr double kJointRate = 1.0 / 6.0;
inline constexpr double kPitch = 1.0;
inline constexpr double kPitchRate = 1.0 / 6.0;
inline constexpr double kLinearRate = 1.0 / 3.0;
inline constexpr double kAction = 1.0 / 6.0;
}  // namespace scales

// Flattened width of the two-layer terrain convolution stack on a 21-cell
// window: conv(1->8, k5, s2) -> conv(8->8, k3, s2) -> 8 channels x 4.
inline constexpr int kTerrainFeatures = 32;

// Per-node input width, terrain features included for the body where the
// role consumes a window (policy, model).
int input_dim(Role role, design::ModuleKind kind);
// Per-node decoded output width; 0 means the role has no output at the kind.
int output_dim(Role role, design::ModuleKind kind);

class NodeNetworkSet {
 public:
  NodeNetworkSet(Role role, const NetConfig& cfg, uint64_t seed);

  Role role() const { return role_; }
  const NetConfig& config() const { return cfg_; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }

  // Welford update of the terrain feature statistics from one forward's
  // flattened convolution output. Replaces the stored tensors so tapes that
  // already recorded the old values keep them.
  void update_terrain_stats(const std::vector<double>& features);
  // Normalization constants derived from the running statistics.
  void terrain_norm(std::vector<double>& mu, std::vector<double>& inv_sigma) const;

  // Model-role delta denormalization stats for one module kind.
  void set_delta_stats(design::ModuleKind kind, const std::vector<double>& mu,
                       const std::vector<double>& sigma);

 private:
  Role role_;
  NetConfig cfg_;
  diff::ParamStore params_;
};

// Per-node hidden vectors in the design's node order. Held as tensors so a
// rollout through the learned model can differentiate through the recurrence.
struct HiddenStateMap {
  std::vector<diff::Tensor> h;
};
HiddenStateMap zero_hidden(const design::DesignGraph& d, const NetConfig& cfg);

struct PolicyTensors {
  diff::Tensor mean;    // [joint_count], rad/s commands
  diff::Tensor logvar;  // [joint_count], clamped to [-8, 2]
};

struct PolicyOutput {
  std::vector<double> mean;
  std::vector<double> logvar;
};

// --- per-node input assembly (scaled; body terrain features excluded) ---
std::vector<diff::Tensor> policy_node_inputs(const design::DesignGraph& d,
                                             const sim::Observation& obs);
// Noiseless observation slices of a state tensor, for rollouts through the
// learned model where gradients must flow into the state.
std::vector<diff::Tensor> policy_node_inputs(const design::DesignGraph& d,
                                             const diff::Tensor& state);
std::vector<diff::Tensor> model_node_inputs(const design::DesignGraph& d,
                                            const diff::Tensor& state,
                                            const diff::Tensor& action);
std::vector<diff::Tensor> torque_node_inputs(const design::DesignGraph& d,
                                             const diff::Tensor& state,
                                             const diff::Tensor& action);

// --- forwards ---
// One control step: encode, `rounds` message/update rounds over the star
// edges, decode. Hidden map is advanced in place.
PolicyTensors policy_forward(NodeNetworkSet& net, const diff::Binding& w,
                             const design::DesignGraph& d,
                             const std::vector<diff::Tensor>& inputs,
                             const std::vector<double>& window, HiddenStateMap& h,
                             bool train_mode);
// Returns next state = state + per-node decoded deltas; stateless across
// steps (fresh zero hidden inside).
diff::Tensor model_forward(NodeNetworkSet& net, const diff::Binding& w,
                           const design::DesignGraph& d, const diff::Tensor& state,
                           const diff::Tensor& action, const std::vector<double>& window,
                           bool train_mode);
// Per-joint torque estimate in command-tracking residual units; no terrain.
diff::Tensor torque_forward(NodeNetworkSet& net, const diff::Binding& w,
                            const design::DesignGraph& d, const diff::Tensor& state,
                            const diff::Tensor& action);

// --- simulator-facing wrappers (no tape, evaluation mode) ---
PolicyOutput policy_step(NodeNetworkSet& net, const design::DesignGraph& d,
                         const sim::Observation& obs, HiddenStateMap& h);
sim::RobotState model_step(NodeNetworkSet& net, const design::DesignGraph& d,
                           const sim::RobotState& s, const std::vector<double>& a,
                           const std::vector<double>& window);
std::vector<double> torque_step(NodeNetworkSet& net, const design::DesignGraph& d,
                                const sim::RobotState& s, const std::vector<double>& a);

}  // namespace modbot::gnn
