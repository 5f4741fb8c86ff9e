#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace modbot::sim {

enum class TerrainKind { kFlat, kStairs, kCurbs, kStaggeredTest };

const char* terrain_name(TerrainKind k);
TerrainKind terrain_from_name(const std::string& name);  // throws std::runtime_error

// Piecewise-constant elevation samples over x in [-2, 30], spacing 0.05 m.
// Elevation is 0 in the start zone (x < 0); feature height grows by 0.02 m
// per difficulty level.
class Heightfield {
 public:
  static constexpr double kDx = 0.05;
  static constexpr double kXMin = -2.0;
  static constexpr double kXMax = 30.0;
  static constexpr double kHeightPerLevel = 0.02;

  Heightfield() = default;
  Heightfield(TerrainKind kind, int level, std::vector<double> samples)
      : kind_(kind), level_(level), samples_(std::move(samples)) {}

  TerrainKind kind() const { return kind_; }
  int level() const { return level_; }
  double feature_height() const { return kHeightPerLevel * level_; }
  const std::vector<double>& samples() const { return samples_; }

  double height(double x) const {
    if (samples_.empty()) return 0.0;
    const auto i = static_cast<int64_t>((x - kXMin) / kDx);
    if (i < 0) return samples_.front();
    if (i >= static_cast<int64_t>(samples_.size())) return samples_.back();
    return samples_[static_cast<size_t>(i)];
  }

 private:
  TerrainKind kind_ = TerrainKind::kFlat;
  int level_ = 0;
  std::vector<double> samples_;
};

// Seed perturbs each feature's start position by +-0.1 m (uniform).
Heightfield make_terrain(TerrainKind kind, int level, uint64_t seed);

// Heights relative to the body, sampled ahead of and behind the body.
constexpr int kWindowSize = 21;
constexpr double kWindowStart = -0.25;
constexpr double kWindowSpacing = 0.075;

std::array<double, kWindowSize> terrain_window(const Heightfield& hf, double body_x,
                                               double body_z);

}  // namespace modbot::sim
