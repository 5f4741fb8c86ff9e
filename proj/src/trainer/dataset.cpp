#include "modbot/trainer/dataset.hpp"

#include <algorithm>
#include <map>

#include "modbot/sim/robot.hpp"

namespace modbot::trainer {

int ExperienceDataset::begin_trajectory() { return next_trajectory_++; }

void ExperienceDataset::add(const design::DesignGraph& d, TransitionRecord r) {
  const size_t sd = static_cast<size_t>(sim::state_dim(d));
  const size_t nj = static_cast<size_t>(d.joint_count());
  if (r.state.size() != sd || r.next_state.size() != sd)
    throw TrainerError("record state size does not match its design");
  if (r.action.size() != nj || r.torque.size() != nj)
    throw TrainerError("record action size does not match its design");
  if (r.window.size() != static_cast<size_t>(sim::kWindowSize))
    throw TrainerError("record window size mismatch");
  if (r.trajectory < 0 || r.trajectory >= next_trajectory_)
    throw TrainerError("record trajectory id was never begun");
  records_.push_back(std::move(r));
}

std::vector<size_t> ExperienceDataset::train_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < records_.size(); ++i)
    if (!validation_trajectory(records_[i].trajectory)) out.push_back(i);
  return out;
}

std::vector<size_t> ExperienceDataset::validation_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < records_.size(); ++i)
    if (validation_trajectory(records_[i].trajectory)) out.push_back(i);
  return out;
}

namespace {

void shuffle(std::vector<size_t>& v, util::Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform() * static_cast<double>(i))]);
}

}  // namespace

std::vector<std::vector<size_t>> make_stratified_batches(const ExperienceDataset& data,
                                                         const std::vector<size_t>& indices,
                                                         int batch, util::Rng& rng) {
  if (indices.empty()) throw TrainerError("cannot batch an empty index list");
  if (batch < 1) throw TrainerError("batch size must be positive");

  std::map<std::pair<int, int>, std::vector<size_t>> groups;
  for (size_t i : indices) {
    const auto& r = data.records()[i];
    groups[{r.design, r.level}].push_back(i);
  }
  if (static_cast<size_t>(batch) < groups.size())
    throw TrainerError("batch size " + std::to_string(batch) + " cannot cover " +
                       std::to_string(groups.size()) + " (design, level) groups");

  std::vector<std::vector<size_t>> pools;
  std::vector<size_t> cursors(groups.size(), 0);
  pools.reserve(groups.size());
  for (auto& [key, pool] : groups) {
    shuffle(pool, rng);
    pools.push_back(std::move(pool));
  }
  std::vector<size_t> rest(indices);
  shuffle(rest, rng);
  size_t rest_cursor = 0;

  const size_t n_batches = (indices.size() + static_cast<size_t>(batch) - 1) /
                           static_cast<size_t>(batch);
  std::vector<std::vector<size_t>> batches(n_batches);
  for (auto& b : batches) {
    b.reserve(static_cast<size_t>(batch));
    for (size_t g = 0; g < pools.size(); ++g) {
      b.push_back(pools[g][cursors[g] % pools[g].size()]);
      ++cursors[g];
    }
    while (b.size() < static_cast<size_t>(batch)) {
      b.push_back(rest[rest_cursor % rest.size()]);
      ++rest_cursor;
    }
  }
  return batches;
}

}  // namespace modbot::trainer
