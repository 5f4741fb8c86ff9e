#include "modbot/trainer/spline.hpp"

#include <algorithm>
#include <stdexcept>

#include "modbot/design/design.hpp"

namespace modbot::trainer {

CubicSpline::CubicSpline(std::vector<double> xs, std::vector<double> ys)
    : xs_(std::move(xs)), ys_(std::move(ys)) {
  const size_t n = xs_.size();
  if (n < 2 || ys_.size() != n) throw std::invalid_argument("spline needs >= 2 matching knots");
  for (size_t i = 1; i < n; ++i)
    if (!(xs_[i] > xs_[i - 1])) throw std::invalid_argument("spline knots must increase");

  // Tridiagonal system for the interior second derivatives, natural ends.
  m_.assign(n, 0.0);
  if (n == 2) return;
  std::vector<double> diag(n - 2), rhs(n - 2), upper(n - 2);
  for (size_t i = 1; i + 1 < n; ++i) {
    const double h0 = xs_[i] - xs_[i - 1];
    const double h1 = xs_[i + 1] - xs_[i];
    diag[i - 1] = 2.0 * (h0 + h1);
    upper[i - 1] = h1;
    rhs[i - 1] = 6.0 * ((ys_[i + 1] - ys_[i]) / h1 - (ys_[i] - ys_[i - 1]) / h0);
  }
  for (size_t i = 1; i < diag.size(); ++i) {
    const double lower = xs_[i + 1] - xs_[i];
    const double f = lower / diag[i - 1];
    diag[i] -= f * upper[i - 1];
    rhs[i] -= f * rhs[i - 1];
  }
  for (size_t i = diag.size(); i-- > 0;) {
    double v = rhs[i];
    if (i + 1 < diag.size()) v -= upper[i] * m_[i + 2];
    m_[i + 1] = v / diag[i];
  }
}

double CubicSpline::at(double x) const {
  size_t i = static_cast<size_t>(
      std::upper_bound(xs_.begin(), xs_.end(), x) - xs_.begin());
  i = std::clamp<size_t>(i, 1, xs_.size() - 1) - 1;
  const double h = xs_[i + 1] - xs_[i];
  const double a = (xs_[i + 1] - x) / h;
  const double b = (x - xs_[i]) / h;
  return a * ys_[i] + b * ys_[i + 1] +
         ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
}

std::vector<std::vector<double>> spline_commands(int joints, int steps, double sigma,
                                                 util::Rng& rng) {
  constexpr int kKnots = 10;
  if (joints < 1 || steps < 2) throw std::invalid_argument("spline_commands needs joints >= 1, steps >= 2");
  std::vector<double> xs(kKnots);
  for (int i = 0; i < kKnots; ++i) xs[i] = (steps - 1) * static_cast<double>(i) / (kKnots - 1);

  std::vector<std::vector<double>> out(static_cast<size_t>(steps),
                                       std::vector<double>(static_cast<size_t>(joints)));
  for (int j = 0; j < joints; ++j) {
    std::vector<double> ys(kKnots);
    for (double& y : ys) y = rng.gaussian(0.0, sigma);
    const CubicSpline s(xs, ys);
    for (int t = 0; t < steps; ++t)
      out[static_cast<size_t>(t)][static_cast<size_t>(j)] =
          std::clamp(s.at(t), -design::geom::kJointVelLimit, design::geom::kJointVelLimit);
  }
  return out;
}

}  // namespace modbot::trainer
