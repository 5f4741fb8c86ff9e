#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "modbot/design/design.hpp"
#include "modbot/diff/ops.hpp"
#include "modbot/diff/param_store.hpp"
#include "modbot/gnn/network.hpp"
#include "modbot/sim/robot.hpp"
#include "modbot/sim/terrain.hpp"
#include "modbot/util/rng.hpp"

namespace modbot::testsupport {

// Ground-truth linear dynamics over a four-limb design, constructed in the
// scaled units the network sees so every visible input and every delta has
// comparable magnitude. Each node's next-step delta is a linear map of its
// own features, the body's visible state, and its own action; legs share one
// map. The wheel-angle column is zero, so the one badly scaled raw input is
// inert, matching its rotational symmetry. Prediction error is reported as
// mean squared error per dimension after dividing by the pooled per-kind
// delta sigma, which makes the metric scale-free and identical for every
// predictor compared on the fixture.
struct LinearSystem {
  design::DesignGraph d;
  int train_count = 0;
  std::vector<std::vector<double>> states, actions, targets;  // raw units
  std::vector<double> weight;  // per state dim: 1 / pooled delta sigma
  std::vector<double> mu_body, sig_body, mu_leg, sig_leg, mu_wheel, sig_wheel;
};

namespace detail {

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> v;
};

inline Mat rand_mat(int rows, int cols, double s, util::Rng& g) {
  Mat m{rows, cols, std::vector<double>(static_cast<size_t>(rows * cols))};
  for (auto& x : m.v) x = s * g.gaussian();
  return m;
}

inline void accumulate(std::vector<double>& y, const Mat& m, const std::vector<double>& x,
                       double factor = 1.0) {
  for (int r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c)
      acc += m.v[static_cast<size_t>(r * m.cols + c)] * x[static_cast<size_t>(c)];
    y[static_cast<size_t>(r)] += factor * acc;
  }
}

}  // namespace detail

// Network-side multiplier for each flat state dimension (x and z are unseen
// by the network and keep scale 1).
inline std::vector<double> dim_scales(const design::DesignGraph& d) {
  std::vector<double> s(static_cast<size_t>(sim::state_dim(d)), 1.0);
  s[2] = gnn::scales::kPitch;
  s[3] = s[4] = gnn::scales::kLinearRate;
  s[5] = gnn::scales::kPitchRate;
  for (int i = 1; i < d.node_count(); ++i) {
    const auto kind = d.nodes[static_cast<size_t>(i)].kind;
    const int off = d.joint_offset(i);
    for (int j = 0; j < design::joints_of(kind); ++j) {
      s[static_cast<size_t>(sim::kBodyStateDim + 2 * (off + j))] =
          kind == design::ModuleKind::kWheel ? gnn::scales::kWheelAngle : gnn::scales::kLegAngle;
      s[static_cast<size_t>(sim::kBodyStateDim + 2 * (off + j) + 1)] = gnn::scales::kJointRate;
    }
  }
  return s;
}

inline LinearSystem make_linear_system(int count, uint64_t seed) {
  using design::ModuleKind;
  LinearSystem sys;
  sys.d = design::make_design("lin", 1.0,
                              {{ModuleKind::kLeg, -0.4},
                               {ModuleKind::kLeg, 0.0},
                               {ModuleKind::kWheel, 0.2},
                               {ModuleKind::kLeg, 0.4}});
  const int sd = sim::state_dim(sys.d);
  const int jc = sys.d.joint_count();
  const auto scale = dim_scales(sys.d);

  util::Rng g(seed);
  const double ms = 0.28;
  const auto b_own = detail::rand_mat(6, 4, ms, g);
  const auto b_leg = detail::rand_mat(6, 4, ms, g);
  const auto b_wheel = detail::rand_mat(6, 1, ms, g);
  const auto l_own = detail::rand_mat(4, 4, ms, g);
  const auto l_body = detail::rand_mat(4, 4, ms, g);
  const auto l_act = detail::rand_mat(4, 2, ms, g);
  const auto w_own = detail::rand_mat(2, 1, ms, g);
  const auto w_body = detail::rand_mat(2, 4, ms, g);
  const auto w_act = detail::rand_mat(2, 1, ms, g);

  const double amp = 0.3;
  const double noise = 0.003;
  for (int i = 0; i < count; ++i) {
    std::vector<double> shat(static_cast<size_t>(sd)), ahat(static_cast<size_t>(jc));
    for (auto& v : shat) v = amp * g.gaussian();
    for (auto& v : ahat) v = amp * g.gaussian();
    const std::vector<double> body4{shat[2], shat[3], shat[4], shat[5]};

    std::vector<double> dhat(static_cast<size_t>(sd), 0.0);
    std::vector<double> dbody(6, 0.0);
    detail::accumulate(dbody, b_own, body4);
    for (int node = 1; node < sys.d.node_count(); ++node) {
      const auto kind = sys.d.nodes[static_cast<size_t>(node)].kind;
      const int off = sys.d.joint_offset(node);
      const auto dim = [&](int k) { return static_cast<size_t>(sim::kBodyStateDim + 2 * off + k); };
      if (kind == ModuleKind::kLeg) {
        const std::vector<double> f{shat[dim(0)], shat[dim(1)], shat[dim(2)], shat[dim(3)]};
        detail::accumulate(dbody, b_leg, f, 1.0 / sys.d.limb_count());
        std::vector<double> dl(4, 0.0);
        detail::accumulate(dl, l_own, f);
        detail::accumulate(dl, l_body, body4);
        detail::accumulate(dl, l_act,
                           std::vector<double>{ahat[static_cast<size_t>(off)],
                                               ahat[static_cast<size_t>(off + 1)]});
        for (int k = 0; k < 4; ++k) dhat[dim(k)] = dl[static_cast<size_t>(k)];
      } else {
        const std::vector<double> f{shat[dim(1)]};
        detail::accumulate(dbody, b_wheel, f, 1.0 / sys.d.limb_count());
        std::vector<double> dw(2, 0.0);
        detail::accumulate(dw, w_own, f);
        detail::accumulate(dw, w_body, body4);
        detail::accumulate(dw, w_act, std::vector<double>{ahat[static_cast<size_t>(off)]});
        dhat[dim(0)] = dw[0];
        dhat[dim(1)] = dw[1];
      }
    }
    for (int k = 0; k < 6; ++k) dhat[static_cast<size_t>(k)] = dbody[static_cast<size_t>(k)];

    std::vector<double> s(static_cast<size_t>(sd)), a(static_cast<size_t>(jc)),
        t(static_cast<size_t>(sd));
    for (int k = 0; k < sd; ++k) {
      const auto ki = static_cast<size_t>(k);
      s[ki] = shat[ki] / scale[ki];
      t[ki] = s[ki] + (dhat[ki] + noise * g.gaussian()) / scale[ki];
    }
    for (int k = 0; k < jc; ++k)
      a[static_cast<size_t>(k)] = ahat[static_cast<size_t>(k)] / gnn::scales::kAction;
    sys.states.push_back(std::move(s));
    sys.actions.push_back(std::move(a));
    sys.targets.push_back(std::move(t));
  }

  sys.train_count = count * 9 / 10;
  const auto delta_at = [&](int i, int dim) {
    return sys.targets[static_cast<size_t>(i)][static_cast<size_t>(dim)] -
           sys.states[static_cast<size_t>(i)][static_cast<size_t>(dim)];
  };
  const auto pooled = [&](const std::vector<int>& dims) {
    double m = 0.0;
    const double n = static_cast<double>(dims.size()) * sys.train_count;
    for (int dim : dims)
      for (int i = 0; i < sys.train_count; ++i) m += delta_at(i, dim);
    m /= n;
    double v = 0.0;
    for (int dim : dims)
      for (int i = 0; i < sys.train_count; ++i) {
        const double e = delta_at(i, dim) - m;
        v += e * e;
      }
    return std::pair<double, double>{m, std::sqrt(v / n)};
  };

  std::vector<std::vector<int>> leg_dims(4), wheel_dims(2);
  std::vector<std::vector<int>> body_dims(6);
  for (int k = 0; k < 6; ++k) body_dims[static_cast<size_t>(k)] = {k};
  for (int node = 1; node < sys.d.node_count(); ++node) {
    const auto kind = sys.d.nodes[static_cast<size_t>(node)].kind;
    const int off = sys.d.joint_offset(node);
    const int width = 2 * design::joints_of(kind);
    for (int k = 0; k < width; ++k) {
      const int dim = sim::kBodyStateDim + 2 * off + k;
      (kind == ModuleKind::kLeg ? leg_dims : wheel_dims)[static_cast<size_t>(k)].push_back(dim);
    }
  }
  sys.weight.assign(static_cast<size_t>(sd), 0.0);
  const auto fill = [&](const std::vector<std::vector<int>>& groups, std::vector<double>& mu,
                        std::vector<double>& sig) {
    mu.resize(groups.size());
    sig.resize(groups.size());
    for (size_t k = 0; k < groups.size(); ++k) {
      const auto [m, s] = pooled(groups[k]);
      mu[k] = m;
      sig[k] = s;
      for (int dim : groups[k]) sys.weight[static_cast<size_t>(dim)] = 1.0 / s;
    }
  };
  fill(body_dims, sys.mu_body, sys.sig_body);
  fill(leg_dims, sys.mu_leg, sys.sig_leg);
  fill(wheel_dims, sys.mu_wheel, sys.sig_wheel);
  return sys;
}

inline std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  const auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r * n + c)]; };
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(at(r, col)) > std::abs(at(piv, col))) piv = r;
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(at(piv, c), at(col, c));
      std::swap(b[static_cast<size_t>(piv)], b[static_cast<size_t>(col)]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = at(r, col) / at(col, col);
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) at(r, c) -= f * at(col, c);
      b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
    }
  }
  std::vector<double> x(static_cast<size_t>(n));
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[static_cast<size_t>(r)];
    for (int c = r + 1; c < n; ++c) acc -= at(r, c) * x[static_cast<size_t>(c)];
    x[static_cast<size_t>(r)] = acc / at(r, r);
  }
  return x;
}

// Per-dimension least squares of the raw delta on [state, action, 1],
// fitted on the training split and scored on the held-out split.
inline double ols_validation_nmse(const LinearSystem& sys) {
  const int sd = sim::state_dim(sys.d);
  const int jc = sys.d.joint_count();
  const int p = sd + jc + 1;
  const auto feats = [&](int i) {
    std::vector<double> z = sys.states[static_cast<size_t>(i)];
    z.insert(z.end(), sys.actions[static_cast<size_t>(i)].begin(),
             sys.actions[static_cast<size_t>(i)].end());
    z.push_back(1.0);
    return z;
  };
  std::vector<double> gram(static_cast<size_t>(p * p), 0.0);
  for (int i = 0; i < sys.train_count; ++i) {
    const auto z = feats(i);
    for (int r = 0; r < p; ++r)
      for (int c = 0; c < p; ++c)
        gram[static_cast<size_t>(r * p + c)] +=
            z[static_cast<size_t>(r)] * z[static_cast<size_t>(c)];
  }
  std::vector<std::vector<double>> theta(static_cast<size_t>(sd));
  for (int dim = 0; dim < sd; ++dim) {
    std::vector<double> rhs(static_cast<size_t>(p), 0.0);
    for (int i = 0; i < sys.train_count; ++i) {
      const auto z = feats(i);
      const double y = sys.targets[static_cast<size_t>(i)][static_cast<size_t>(dim)] -
                       sys.states[static_cast<size_t>(i)][static_cast<size_t>(dim)];
      for (int r = 0; r < p; ++r) rhs[static_cast<size_t>(r)] += z[static_cast<size_t>(r)] * y;
    }
    theta[static_cast<size_t>(dim)] = solve_linear(gram, rhs);
  }
  double total = 0.0;
  const int n_val = static_cast<int>(sys.states.size()) - sys.train_count;
  for (int i = sys.train_count; i < static_cast<int>(sys.states.size()); ++i) {
    const auto z = feats(i);
    for (int dim = 0; dim < sd; ++dim) {
      const auto& th = theta[static_cast<size_t>(dim)];
      double pred = 0.0;
      for (int r = 0; r < p; ++r) pred += th[static_cast<size_t>(r)] * z[static_cast<size_t>(r)];
      const double y = sys.targets[static_cast<size_t>(i)][static_cast<size_t>(dim)] -
                       sys.states[static_cast<size_t>(i)][static_cast<size_t>(dim)];
      const double e = (pred - y) * sys.weight[static_cast<size_t>(dim)];
      total += e * e;
    }
  }
  return total / (static_cast<double>(n_val) * sd);
}

inline void apply_delta_stats(gnn::NodeNetworkSet& net, const LinearSystem& sys) {
  net.set_delta_stats(design::ModuleKind::kBody, sys.mu_body, sys.sig_body);
  net.set_delta_stats(design::ModuleKind::kLeg, sys.mu_leg, sys.sig_leg);
  net.set_delta_stats(design::ModuleKind::kWheel, sys.mu_wheel, sys.sig_wheel);
}

inline double gnn_validation_nmse(gnn::NodeNetworkSet& net, const LinearSystem& sys) {
  const int sd = sim::state_dim(sys.d);
  const std::vector<double> window(sim::kWindowSize, 0.0);
  double total = 0.0;
  const int n_val = static_cast<int>(sys.states.size()) - sys.train_count;
  for (int i = sys.train_count; i < static_cast<int>(sys.states.size()); ++i) {
    diff::Tape tape;
    const diff::Binding w(tape, net.params(), true);
    const auto next =
        gnn::model_forward(net, w, sys.d, diff::Tensor::of(sys.states[static_cast<size_t>(i)]),
                           diff::Tensor::of(sys.actions[static_cast<size_t>(i)]), window, false);
    for (int dim = 0; dim < sd; ++dim) {
      const double e = (next.at(dim) - sys.targets[static_cast<size_t>(i)][static_cast<size_t>(dim)]) *
                       sys.weight[static_cast<size_t>(dim)];
      total += e * e;
    }
  }
  return total / (static_cast<double>(n_val) * sd);
}

// Minibatch SGD on the sigma-normalized delta error, matching the metric.
inline void fit_linear_system(gnn::NodeNetworkSet& net, const LinearSystem& sys, int epochs,
                              uint64_t seed) {
  const std::vector<double> window(sim::kWindowSize, 0.0);
  const diff::Tensor wvec = diff::Tensor::of(sys.weight);
  std::vector<int> order(static_cast<size_t>(sys.train_count));
  std::iota(order.begin(), order.end(), 0);
  util::Rng g(seed);
  const int batch = 20;
  const int hold = epochs - 6;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr = 0.15 * (epoch < hold ? 1.0 : std::pow(0.5, epoch - hold + 1));
    for (int i = sys.train_count - 1; i > 0; --i) {
      int j = static_cast<int>(g.uniform() * (i + 1));
      if (j > i) j = i;
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int start = 0; start + batch <= sys.train_count; start += batch) {
      diff::Tape tape;
      const diff::Binding w(tape, net.params(), false);
      diff::Tensor loss;
      for (int k = 0; k < batch; ++k) {
        const int i = order[static_cast<size_t>(start + k)];
        const auto next = gnn::model_forward(
            net, w, sys.d, diff::Tensor::of(sys.states[static_cast<size_t>(i)]),
            diff::Tensor::of(sys.actions[static_cast<size_t>(i)]), window, true);
        const auto term = diff::mean(diff::square(
            diff::mul(diff::sub(next, diff::Tensor::of(sys.targets[static_cast<size_t>(i)])), wvec)));
        loss = k == 0 ? term : diff::add(loss, term);
      }
      loss = diff::scale(loss, 1.0 / batch);
      const auto grads = diff::backward(loss, w);
      diff::sgd_step(net.params(), grads, lr, 0.9);
    }
  }
}

}  // namespace modbot::testsupport
