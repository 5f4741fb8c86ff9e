#include "modbot/diff/tape.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>

#include "modbot/diff/ops.hpp"

namespace modbot::diff {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

void check_finite(const std::vector<double>& values, Op op) {
  for (double v : values) {
    if (!std::isfinite(v))
      throw DiffError(std::string("non-finite value produced by ") + op_name(op));
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMatmul: return "matmul";
    case Op::kBiasAdd: return "bias_add";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kAbs: return "abs";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kConv1d: return "conv1d";
    case Op::kClamp: return "clamp";
    case Op::kGaussianLogDensity: return "gaussian_log_density";
    case Op::kGaussianSample: return "gaussian_sample";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

bool Tape::finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void Tape::set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

Tensor Tape::record(Node node, std::vector<int64_t> out_shape, std::vector<double> out_values) {
  if (finite_checks_enabled()) check_finite(out_values, node.op);
  Tensor out = Tensor::of(std::move(out_shape), std::move(out_values));
  out.node_ = static_cast<int64_t>(nodes_.size());
  out.tape_ = this;
  node.out = out;
  nodes_.push_back(std::move(node));
  return out;
}

Tensor Tape::leaf(const Tensor& value) {
  if (finite_checks_enabled()) check_finite(value.values(), Op::kLeaf);
  Node n;
  n.op = Op::kLeaf;
  Tensor out = value.detached();
  out.node_ = static_cast<int64_t>(nodes_.size());
  out.tape_ = this;
  n.out = out;
  nodes_.push_back(std::move(n));
  return out;
}

std::vector<double>& Tape::grad_slot(int64_t id, int64_t size) {
  auto& g = grads_[static_cast<size_t>(id)];
  if (g.empty()) g.assign(static_cast<size_t>(size), 0.0);
  return g;
}

void Tape::backward(const Tensor& root) {
  if (!root.tracked() || root.tape() != this)
    throw DiffError("backward root is not recorded on this tape");
  if (root.size() != 1)
    throw DiffError("backward root must be scalar, got shape " + root.shape_str());
  if (!std::isfinite(root.scalar())) throw DiffError("backward root is non-finite");

  grads_.assign(nodes_.size(), {});
  grad_slot(root.node(), 1)[0] = 1.0;
  for (int64_t id = root.node(); id >= 0; --id) {
    if (grads_[static_cast<size_t>(id)].empty()) continue;
    backward_node(id);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  std::vector<double> out(static_cast<size_t>(t.size()), 0.0);
  if (!t.tracked() || t.tape() != this) return out;
  const auto& g = grads_[static_cast<size_t>(t.node())];
  if (!g.empty()) out = g;
  return out;
}

void Tape::backward_node(int64_t id) {
  const Node& n = nodes_[static_cast<size_t>(id)];
  const std::vector<double>& g = grads_[static_cast<size_t>(id)];
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (n.in1 >= 0) {
        auto& gb = grad_slot(n.in1, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::kSub: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (n.in1 >= 0) {
        auto& gb = grad_slot(n.in1, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const double* av = n.a.data();
      const double* bv = n.b.data();
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (n.in1 >= 0) {
        auto& gb = grad_slot(n.in1, n.b.size());
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
      break;
    }
    case Op::kScale: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += n.p0 * g[i];
      }
      break;
    }
    case Op::kAddScalar: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      break;
    }
    case Op::kMatmul: {
      const int64_t m = n.a.dim(0), k = n.a.dim(1);
      const double* av = n.a.data();
      const double* bv = n.b.data();
      if (n.b.rank() == 1) {
        if (n.in0 >= 0) {
          auto& ga = grad_slot(n.in0, n.a.size());
          for (int64_t i = 0; i < m; ++i) {
            const double gi = g[static_cast<size_t>(i)];
            double* row = ga.data() + i * k;
            for (int64_t l = 0; l < k; ++l) row[l] += gi * bv[l];
          }
        }
        if (n.in1 >= 0) {
          auto& gb = grad_slot(n.in1, n.b.size());
          for (int64_t i = 0; i < m; ++i) {
            const double gi = g[static_cast<size_t>(i)];
            const double* row = av + i * k;
            for (int64_t l = 0; l < k; ++l) gb[static_cast<size_t>(l)] += gi * row[l];
          }
        }
      } else {
        const int64_t c = n.b.dim(1);
        if (n.in0 >= 0) {
          auto& ga = grad_slot(n.in0, n.a.size());
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t l = 0; l < k; ++l) {
              const double* grow = g.data() + i * c;
              const double* brow = bv + l * c;
              double acc = 0.0;
              for (int64_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
              ga[static_cast<size_t>(i * k + l)] += acc;
            }
          }
        }
        if (n.in1 >= 0) {
          auto& gb = grad_slot(n.in1, n.b.size());
          for (int64_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * c;
            for (int64_t l = 0; l < k; ++l) {
              const double ail = av[i * k + l];
              double* brow = gb.data() + l * c;
              for (int64_t j = 0; j < c; ++j) brow[j] += ail * grow[j];
            }
          }
        }
      }
      break;
    }
    case Op::kBiasAdd: {
      const int64_t c = n.out.dim(0), l = n.out.dim(1);
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (n.in1 >= 0) {
        auto& gb = grad_slot(n.in1, c);
        for (int64_t ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          for (int64_t j = 0; j < l; ++j) acc += g[static_cast<size_t>(ci * l + j)];
          gb[static_cast<size_t>(ci)] += acc;
        }
      }
      break;
    }
    case Op::kTanh: {
      if (n.in0 >= 0) {
        const double* y = n.out.data();
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      }
      break;
    }
    case Op::kRelu: {
      if (n.in0 >= 0) {
        const double* x = n.a.data();
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
      }
      break;
    }
    case Op::kSoftplus: {
      if (n.in0 >= 0) {
        const double* x = n.a.data();
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (1.0 + std::exp(-x[i]));
      }
      break;
    }
    case Op::kSigmoid: {
      if (n.in0 >= 0) {
        const double* y = n.out.data();
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      }
      break;
    }
    case Op::kExp: {
      if (n.in0 >= 0) {
        const double* y = n.out.data();
        auto& ga = grad_slot(n.in0, n.out.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      break;
    }
    case Op::kLog: {
      if (n.in0 >= 0) {
        const double* x = n.a.data();
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
      }
      break;
    }
    case Op::kAbs: {
      if (n.in0 >= 0) {
        const double* x = n.a.data();
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i)
          ga[i] += x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
      }
      break;
    }
    case Op::kSquare: {
      if (n.in0 >= 0) {
        const double* x = n.a.data();
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
      }
      break;
    }
    case Op::kSum: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.a.size());
        const double gs = g[0];
        for (double& v : ga) v += gs;
      }
      break;
    }
    case Op::kMean: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.a.size());
        const double gs = g[0] / static_cast<double>(n.a.size());
        for (double& v : ga) v += gs;
      }
      break;
    }
    case Op::kConcat: {
      const int64_t na = static_cast<int64_t>(n.p0);
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, na);
        for (int64_t i = 0; i < na; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
      if (n.in1 >= 0) {
        const int64_t nb = n.out.size() - na;
        auto& gb = grad_slot(n.in1, nb);
        for (int64_t i = 0; i < nb; ++i)
          gb[static_cast<size_t>(i)] += g[static_cast<size_t>(na + i)];
      }
      break;
    }
    case Op::kSlice: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.a.size());
        const int64_t start = static_cast<int64_t>(n.p0);
        for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(start) + i] += g[i];
      }
      break;
    }
    case Op::kReshape: {
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      break;
    }
    case Op::kConv1d: {
      const int64_t ci_n = n.a.dim(0), l = n.a.dim(1);
      const int64_t co_n = n.b.dim(0), k = n.b.dim(2);
      const int64_t s = static_cast<int64_t>(n.p0);
      const int64_t lo = n.out.dim(1);
      const double* in = n.a.data();
      const double* ker = n.b.data();
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.a.size());
        for (int64_t co = 0; co < co_n; ++co) {
          const double* grow = g.data() + co * lo;
          for (int64_t ci = 0; ci < ci_n; ++ci) {
            const double* krow = ker + (co * ci_n + ci) * k;
            double* garow = ga.data() + ci * l;
            for (int64_t o = 0; o < lo; ++o) {
              const double go = grow[o];
              for (int64_t kk = 0; kk < k; ++kk) garow[o * s + kk] += go * krow[kk];
            }
          }
        }
      }
      if (n.in1 >= 0) {
        auto& gb = grad_slot(n.in1, n.b.size());
        for (int64_t co = 0; co < co_n; ++co) {
          const double* grow = g.data() + co * lo;
          for (int64_t ci = 0; ci < ci_n; ++ci) {
            const double* irow = in + ci * l;
            double* kgrad = gb.data() + (co * ci_n + ci) * k;
            for (int64_t o = 0; o < lo; ++o) {
              const double go = grow[o];
              for (int64_t kk = 0; kk < k; ++kk) kgrad[kk] += go * irow[o * s + kk];
            }
          }
        }
      }
      break;
    }
    case Op::kClamp: {
      if (n.in0 >= 0) {
        const double* x = n.a.data();
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i)
          ga[i] += (x[i] > n.p0 && x[i] < n.p1) ? g[i] : 0.0;
      }
      break;
    }
    case Op::kGaussianLogDensity: {
      const double* x = n.a.data();
      const double* mu = n.b.data();
      const double* lv = n.c.data();
      for (size_t i = 0; i < g.size(); ++i) {
        const double inv_var = std::exp(-lv[i]);
        const double d = (x[i] - mu[i]) * inv_var;
        if (n.in0 >= 0) grad_slot(n.in0, n.a.size())[i] += -d * g[i];
        if (n.in1 >= 0) grad_slot(n.in1, n.b.size())[i] += d * g[i];
        if (n.in2 >= 0)
          grad_slot(n.in2, n.c.size())[i] += 0.5 * ((x[i] - mu[i]) * d - 1.0) * g[i];
      }
      break;
    }
    case Op::kGaussianSample: {
      const double* mu = n.a.data();
      const double* y = n.out.data();
      if (n.in0 >= 0) {
        auto& ga = grad_slot(n.in0, n.a.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (n.in1 >= 0) {
        auto& gb = grad_slot(n.in1, n.b.size());
        for (size_t i = 0; i < g.size(); ++i) gb[i] += 0.5 * (y[i] - mu[i]) * g[i];
      }
      break;
    }
  }
}

}  // namespace modbot::diff
