#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "modbot/design/design.hpp"
#include "modbot/sim/terrain.hpp"
#include "modbot/util/rng.hpp"

namespace modbot::trainer {

struct TrainerError : std::runtime_error {
  explicit TrainerError(const std::string& what) : std::runtime_error(what) {}
};

// One control-step transition. `action` is the command the simulator executed
// during this step (one behind the command issued at it); `torque` is the
// per-joint tracking residual from the same step; `window` is the noiseless
// terrain slice at `state`.
struct TransitionRecord {
  int design = 0;  // index into the run's design list
  sim::TerrainKind env = sim::TerrainKind::kFlat;
  int level = 0;
  int trajectory = 0;
  std::vector<double> state;
  std::vector<double> action;
  std::vector<double> next_state;
  std::vector<double> torque;
  std::vector<double> window;
};

// Append-only transition store. Trajectories are the unit of the train /
// validation split: every tenth trajectory is held out.
class ExperienceDataset {
 public:
  int begin_trajectory();
  void add(const design::DesignGraph& d, TransitionRecord r);

  size_t size() const { return records_.size(); }
  int trajectory_count() const { return next_trajectory_; }
  const std::vector<TransitionRecord>& records() const { return records_; }

  static bool validation_trajectory(int trajectory) { return trajectory % 10 == 9; }
  std::vector<size_t> train_indices() const;
  std::vector<size_t> validation_indices() const;

 private:
  std::vector<TransitionRecord> records_;
  int next_trajectory_ = 0;
};

// Minibatches over `indices`. Every batch draws one sample from each
// (design, level) group present, then fills from a shuffled pass over the
// whole index list; batch must cover the group count.
std::vector<std::vector<size_t>> make_stratified_batches(const ExperienceDataset& data,
                                                         const std::vector<size_t>& indices,
                                                         int batch, util::Rng& rng);

}  // namespace modbot::trainer
