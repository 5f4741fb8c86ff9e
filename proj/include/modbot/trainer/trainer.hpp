#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "modbot/gnn/network.hpp"
#include "modbot/sim/robot.hpp"
#include "modbot/sim/terrain.hpp"
#include "modbot/trainer/config.hpp"
#include "modbot/trainer/dataset.hpp"

namespace modbot::trainer {

// --- bootstrap -------------------------------------------------------------

// Spline-command rollouts on flat ground: n_traj trajectories of `steps`
// control steps per design, actions drawn via spline_commands with
// sigma = 2 rad/s. Appends the executed transitions to `data`.
void collect_random(ExperienceDataset& data, const std::vector<design::DesignGraph>& designs,
                    int n_traj, int steps, uint64_t seed);

// --- supervised fits --------------------------------------------------------

struct ModelFitResult {
  double initial_mse = 0.0;          // before the first step
  double final_mse = 0.0;
  std::vector<double> epoch_mse;     // after each epoch
  bool diverged = false;             // final worse than 10x initial
};

// Fits the model's per-kind state deltas by SGD with momentum. Deltas are
// normalized by statistics pooled from the training split (replaced on the
// net each call); the reported MSE is the per-dimension normalized squared
// error on the held-out trajectories, averaged over dimensions and records.
// The rate holds at model_lr and halves each epoch over the final stretch.
ModelFitResult train_model(gnn::NodeNetworkSet& model,
                           const std::vector<design::DesignGraph>& designs,
                           const ExperienceDataset& data, const Hyperparams& hp,
                           uint64_t seed);

struct TorqueFitResult {
  double final_mse = 0.0;
  double baseline_mse = 0.0;  // per-joint-class constant-mean predictor
};

// Regression of the per-joint tracking-residual labels; raw units. Reuses
// the model_* hyperparameters.
TorqueFitResult train_torque_estimator(gnn::NodeNetworkSet& torque,
                                       const std::vector<design::DesignGraph>& designs,
                                       const ExperienceDataset& data, const Hyperparams& hp,
                                       uint64_t seed);

// --- policy phase -----------------------------------------------------------

struct BufferEntry {
  int design = 0;
  sim::TerrainKind env = sim::TerrainKind::kFlat;
  int level = 0;
  sim::Heightfield terrain;
  sim::RobotState state;
  std::vector<std::vector<double>> hidden;  // per node, detached values
};

using ImaginationBuffer = std::vector<BufferEntry>;

struct CurriculumState {
  std::vector<int> level;            // per design
  std::vector<double> mean_distance;
};

CurriculumState make_curriculum(int design_count);

// n_batch fresh simulator resets with zero hidden vectors, cycling over
// (design, env, level <= current) triples.
ImaginationBuffer init_buffer(const std::vector<design::DesignGraph>& designs,
                              const std::vector<EnvSpec>& envs, const CurriculumState& cs,
                              const gnn::NetConfig& cfg, int n_batch, uint64_t seed);

// Reward terms applied to model-propagated states; mirrors the simulator
// reward without the failure penalty (the model never flags failure).
struct ImaginedRewardWeights {
  double progress = 1.0;
  double pitch = 0.05;
  double effort = 0.001;
  double stance = 0.01;
};

// Validation-reward gate. Construction snapshots the store; check() reverts
// to the snapshot and halves the rate when the reward falls below the
// initial one, otherwise replaces the snapshot. finish() pops the snapshot
// and must run once the phase ends.
class LrGate {
 public:
  LrGate(diff::ParamStore& params, double lr, double initial_reward);
  bool check(double reward);  // true when reverted
  void revert();              // restore + halve, outside a reward check
  void finish();
  double lr() const { return lr_; }
  double initial() const { return initial_; }
  int reversions() const { return reversions_; }

 private:
  diff::ParamStore* params_;
  double lr_;
  double initial_;
  int reversions_ = 0;
  bool finished_ = false;
};

struct PolicyOptResult {
  std::vector<double> validation_rewards;  // phase start, then each gate check
  double final_lr = 0.0;
  int reversions = 0;
  bool aborted = false;   // learning rate underflow
};

// K gradient steps of the imagined T-step rollout loss
// (-mean total reward - beta * entropy), sampled actions, model frozen.
// After every step the second buffer half is overwritten with detached
// midpoint states and hidden vectors of rollouts started from the first
// half. The gate reverts on held-out validation-reward drops.
PolicyOptResult optimize_policy(gnn::NodeNetworkSet& policy, gnn::NodeNetworkSet& model,
                                const std::vector<design::DesignGraph>& designs,
                                ImaginationBuffer& buffer, const Hyperparams& hp,
                                uint64_t seed,
                                const ImaginedRewardWeights& rw = ImaginedRewardWeights{});

// Imagined rollout loss on an existing tape, shared by optimize_policy and
// the gradient checks. sample=false uses distribution means; train_mode
// gates the policy's terrain statistics updates. Returns the loss tensor;
// when midpoints is non-null, fills it with per-entry detached midpoint
// (state, hidden) pairs.
struct RolloutMidpoints {
  std::vector<sim::RobotState> state;
  std::vector<std::vector<std::vector<double>>> hidden;
};
diff::Tensor imagined_loss(gnn::NodeNetworkSet& policy, gnn::NodeNetworkSet& model,
                           const diff::Binding& wp, const diff::Binding& wm,
                           const std::vector<design::DesignGraph>& designs,
                           const std::vector<BufferEntry>& entries, int horizon,
                           double entropy_beta, const ImaginedRewardWeights& rw, bool sample,
                           bool train_mode, uint64_t noise_seed,
                           RolloutMidpoints* midpoints);

// --- curriculum and collection ----------------------------------------------

// Mean-action rollout distance per (design, env) at each design's current
// level, averaged over episodes; `steps` control steps per episode.
std::vector<std::vector<double>> measure_distances(gnn::NodeNetworkSet& policy,
                                                   const std::vector<design::DesignGraph>& designs,
                                                   const std::vector<EnvSpec>& envs,
                                                   const CurriculumState& cs, int episodes,
                                                   int steps, uint64_t seed);

// Levels advance by one (capped) when every design's mean distance clears
// the threshold; with per_design_curriculum each design advances on its own.
CurriculumState curriculum_update(CurriculumState cs, const std::vector<double>& distances,
                                  const Hyperparams& hp);

// Two trajectories per (design, env, level <= current): a closed-loop
// mean-action rollout, and the imagined mean command sequence perturbed with
// spline noise and replayed open-loop. Both truncate at failure. Returns the
// number of records appended.
size_t collect_onpolicy(ExperienceDataset& data, gnn::NodeNetworkSet& policy,
                        gnn::NodeNetworkSet& model,
                        const std::vector<design::DesignGraph>& designs,
                        const std::vector<EnvSpec>& envs, const CurriculumState& cs,
                        const Hyperparams& hp, uint64_t seed);

// --- checkpoints and the outer loop ------------------------------------------

// One container holding both parameter sets under role prefixes plus the
// architecture as a meta record.
void save_networks(const std::string& path, const gnn::NodeNetworkSet& policy,
                   const gnn::NodeNetworkSet& model);

struct LoadedNetworks {
  gnn::NodeNetworkSet policy;
  gnn::NodeNetworkSet model;
};
// Rebuilds the networks from the meta record and loads every parameter;
// throws TrainerError naming missing or mismatched entries.
LoadedNetworks load_networks(const std::string& path);

struct RunArtifacts {
  std::vector<std::string> checkpoints;
  std::string curves_path;
  std::string log_path;
  uint64_t final_checksum = 0;
};

// Full training loop: bootstrap, then per iteration model fit, policy
// optimization, curriculum update, and on-policy collection. Writes
// per-iteration checkpoints, key=value log lines, and curves.csv under
// out_dir. Fully reproducible from (config, seed).
RunArtifacts run(const RunConfig& cfg, const std::string& out_dir,
                 const std::function<void(const std::string&)>& echo = {});

}  // namespace modbot::trainer
