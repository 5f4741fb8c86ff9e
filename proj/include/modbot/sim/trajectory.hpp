#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "modbot/sim/terrain.hpp"

namespace modbot::sim {

struct TrajRecord {
  uint32_t design = 0;  // index into TrajLog::designs
  uint32_t env = 0;     // index into TrajLog::envs
  int32_t level = 0;
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::array<double, kWindowSize> window{};
};

struct TrajLog {
  std::vector<std::string> designs;
  std::vector<std::string> envs;
  std::vector<TrajRecord> records;

  uint32_t design_index(const std::string& name);
  uint32_t env_index(const std::string& name);
};

// Binary container: magic + version header, name tables, then one
// length-prefixed record per control step. Little-endian.
void write_trajectories(const std::string& path, const TrajLog& log);
TrajLog read_trajectories(const std::string& path);  // throws std::runtime_error

// One row per record; vector-valued fields are space-separated inside a cell.
void export_trajectories_csv(const std::string& path, const TrajLog& log);

}  // namespace modbot::sim
