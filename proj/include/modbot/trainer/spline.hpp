#pragma once

#include <vector>

#include "modbot/util/rng.hpp"

namespace modbot::trainer {

// Natural cubic interpolation through strictly increasing knots. Evaluation
// outside the knot range extrapolates the end segments.
class CubicSpline {
 public:
  CubicSpline(std::vector<double> xs, std::vector<double> ys);
  double at(double x) const;

 private:
  std::vector<double> xs_, ys_, m_;  // m_ = second derivatives at the knots
};

// Smooth per-joint velocity commands: 10 gaussian knots N(0, sigma^2) spread
// evenly over the sequence, splined, evaluated at each control step, and
// clamped to the joint velocity limit. Returns [steps][joints].
std::vector<std::vector<double>> spline_commands(int joints, int steps, double sigma,
                                                 util::Rng& rng);

}  // namespace modbot::trainer
