#include "modbot/sim/terrain.hpp"

#include <stdexcept>

#include "modbot/util/rng.hpp"

namespace modbot::sim {
namespace {

struct Feature {
  double start;
  double end;        // exclusive; rises extend to +inf via `cumulative`
  double elevation;  // absolute elevation inside [start, end)
};

constexpr double kFirstFeatureX = 1.0;
constexpr double kStartJitter = 0.1;
constexpr double kStairRun = 0.3;
constexpr double kCurbWidth = 0.3;
constexpr double kCurbPeriod = 1.5;
constexpr double kStaggerRun = 0.9;

}  // namespace

const char* terrain_name(TerrainKind k) {
  switch (k) {
    case TerrainKind::kFlat: return "flat";
    case TerrainKind::kStairs: return "stairs";
    case TerrainKind::kCurbs: return "curbs";
    case TerrainKind::kStaggeredTest: return "staggered";
  }
  return "?";
}

TerrainKind terrain_from_name(const std::string& name) {
  if (name == "flat") return TerrainKind::kFlat;
  if (name == "stairs") return TerrainKind::kStairs;
  if (name == "curbs") return TerrainKind::kCurbs;
  if (name == "staggered") return TerrainKind::kStaggeredTest;
  throw std::runtime_error("unknown terrain kind '" + name + "'");
}

Heightfield make_terrain(TerrainKind kind, int level, uint64_t seed) {
  if (level < 0) throw std::runtime_error("terrain difficulty level must be >= 0");
  const double h = Heightfield::kHeightPerLevel * level;
  const auto n = static_cast<size_t>((Heightfield::kXMax - Heightfield::kXMin) /
                                     Heightfield::kDx) + 1;
  std::vector<double> samples(n, 0.0);
  util::Rng rng(seed);

  if (kind != TerrainKind::kFlat && h > 0.0) {
    // Ascending-edge terrains raise the ground permanently at each edge;
    // curbs return to the base level after each block.
    const bool cumulative = kind != TerrainKind::kCurbs;
    const double spacing = kind == TerrainKind::kStairs     ? kStairRun
                           : kind == TerrainKind::kCurbs    ? kCurbPeriod
                                                            : kStaggerRun;
    std::vector<Feature> features;
    for (int k = 0;; ++k) {
      const double start =
          kFirstFeatureX + spacing * k + rng.uniform(-kStartJitter, kStartJitter);
      if (start > Heightfield::kXMax) break;
      Feature f;
      f.start = start;
      f.end = cumulative ? Heightfield::kXMax + 1.0 : start + kCurbWidth;
      f.elevation = cumulative ? h * (k + 1) : h;
      features.push_back(f);
    }
    for (size_t i = 0; i < n; ++i) {
      const double x = Heightfield::kXMin + Heightfield::kDx * static_cast<double>(i);
      if (x < 0.0) continue;  // start zone stays at elevation 0
      double e = 0.0;
      for (const auto& f : features) {
        if (x >= f.start && x < f.end) e = cumulative ? f.elevation : std::max(e, f.elevation);
      }
      samples[i] = e;
    }
  }
  return Heightfield(kind, level, std::move(samples));
}

std::array<double, kWindowSize> terrain_window(const Heightfield& hf, double body_x,
                                               double body_z) {
  std::array<double, kWindowSize> w;
  for (int i = 0; i < kWindowSize; ++i)
    w[i] = hf.height(body_x + kWindowStart + kWindowSpacing * i) - body_z;
  return w;
}

}  // namespace modbot::sim
