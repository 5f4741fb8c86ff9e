#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modbot/design/design.hpp"
#include "modbot/gnn/network.hpp"
#include "modbot/sim/terrain.hpp"
#include "modbot/trainer/dataset.hpp"

namespace modbot::trainer {

struct ConfigError : TrainerError {
  explicit ConfigError(const std::string& what) : TrainerError(what) {}
};

struct EnvSpec {
  sim::TerrainKind kind = sim::TerrainKind::kFlat;
  int max_level = 0;
};

struct Hyperparams {
  int iterations = 1;       // outer loops of model -> policy -> collect
  int horizon = 16;         // imagined rollout length, control steps; even
  int policy_steps = 200;   // gradient steps per policy phase
  int batch = 64;           // imagination buffer size; even
  int model_epochs = 20;
  int model_batch = 64;
  double policy_lr = 3e-3;
  double model_lr = 1e-3;
  double entropy_beta = 1e-3;
  double curriculum_threshold = 2.0;  // metres per measured rollout
  int max_level = 10;
  bool per_design_curriculum = false;
  int random_trajectories = 8;   // bootstrap rollouts per design
  int random_steps = 100;        // bootstrap rollout length
  int curriculum_episodes = 3;   // measured rollouts per (design, env)
  double onpolicy_noise = 0.5;   // spline noise scale relative to bootstrap
};

// Throws TrainerError on out-of-range values.
void validate(const Hyperparams& hp);

struct RunConfig {
  std::vector<design::DesignGraph> designs;
  std::vector<EnvSpec> envs;
  gnn::NetConfig net;
  Hyperparams hp;
  uint64_t seed = 0;
};

// Text format, one setting per line, '#' comments, [section] headers:
//   [designs]       one builtin name or design file path per line
//   [environments]  "<flat|stairs|curbs|staggered> <max_level>" per line
//   [network]       hidden / enc_hidden / rounds
//   [train]         Hyperparams fields by name
//   [seed]          seed <u64>
// Errors carry "<source>:<line>:".
RunConfig parse_run_config(const std::string& text, const std::string& source);
RunConfig load_run_config(const std::string& path);

}  // namespace modbot::trainer
