#pragma once

#include <cstdint>
#include <vector>

#include "modbot/diff/tensor.hpp"

namespace modbot::diff {

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kMatmul,
  kBiasAdd,
  kTanh,
  kRelu,
  kSoftplus,
  kSigmoid,
  kExp,
  kLog,
  kAbs,
  kSquare,
  kSum,
  kMean,
  kConcat,
  kSlice,
  kConv1d,
  kClamp,
  kGaussianLogDensity,
  kGaussianSample,
  kReshape,
};

const char* op_name(Op op);

// One recorded operation: the op kind, input node ids (-1 when the input was
// a constant), and the tensors needed to evaluate the backward rule.
struct Node {
  Op op;
  int64_t in0 = -1, in1 = -1, in2 = -1;
  Tensor a, b, c;  // saved inputs (a, b, c follow the op's argument order)
  Tensor out;
  double p0 = 0.0, p1 = 0.0;  // op parameters (stride, bounds, scale, ...)
};

// Append-only record of operations. Backward walks nodes strictly in reverse
// creation order and accumulates gradients per node. One tape per rollout;
// tapes are single-threaded, independent tapes may run in parallel.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a gradient-tracked input sharing the given tensor's storage.
  Tensor leaf(const Tensor& value);

  size_t node_count() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates to all reachable nodes.
  // root must be scalar and finite.
  void backward(const Tensor& root);

  // Gradient of the last backward() root w.r.t. t. Zeros if t never
  // received a contribution (disconnected) or is a constant.
  std::vector<double> grad(const Tensor& t) const;

  // --- used by the op implementations ---
  Tensor record(Node node, std::vector<int64_t> out_shape, std::vector<double> out_values);
  std::vector<double>& grad_slot(int64_t id, int64_t size);

  static bool finite_checks_enabled();
  static void set_finite_checks(bool on);

 private:
  void backward_node(int64_t id);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

}  // namespace modbot::diff
