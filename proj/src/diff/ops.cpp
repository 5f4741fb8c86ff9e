#include "modbot/diff/ops.hpp"

#include <cmath>
#include <string>

namespace modbot::diff {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Tape* common_tape(std::initializer_list<const Tensor*> inputs, Op op) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape())
      throw DiffError(std::string(op_name(op)) + ": inputs recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

int64_t in_id(const Tensor& t, Tape* tape) { return t.tape() == tape ? t.node() : -1; }

[[noreturn]] void shape_error(Op op, const Tensor& a, const Tensor& b) {
  throw DiffError(std::string(op_name(op)) + ": shape mismatch " + a.shape_str() + " vs " +
                  b.shape_str());
}

void require_same_shape(Op op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
}

Tensor emit(Tape* tape, Node node, std::vector<int64_t> shape, std::vector<double> values) {
  if (!tape) {
    if (Tape::finite_checks_enabled()) {
      for (double v : values) {
        if (!std::isfinite(v))
          throw DiffError(std::string("non-finite value produced by ") + op_name(node.op));
      }
    }
    return Tensor::of(std::move(shape), std::move(values));
  }
  return tape->record(std::move(node), std::move(shape), std::move(values));
}

Tensor unary(Op op, const Tensor& a, double (*f)(double), bool save_input, bool save_output) {
  Tape* tape = common_tape({&a}, op);
  std::vector<double> out(a.values());
  for (double& v : out) v = f(v);
  Node n;
  n.op = op;
  n.in0 = in_id(a, tape);
  if (save_input) n.a = a;
  Tensor r = emit(tape, std::move(n), a.shape(), std::move(out));
  (void)save_output;  // the output tensor is always kept on the node
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(Op::kAdd, a, b);
  Tape* tape = common_tape({&a, &b}, Op::kAdd);
  std::vector<double> out(a.values());
  const double* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Node n;
  n.op = Op::kAdd;
  n.in0 = in_id(a, tape);
  n.in1 = in_id(b, tape);
  return emit(tape, std::move(n), a.shape(), std::move(out));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(Op::kSub, a, b);
  Tape* tape = common_tape({&a, &b}, Op::kSub);
  std::vector<double> out(a.values());
  const double* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Node n;
  n.op = Op::kSub;
  n.in0 = in_id(a, tape);
  n.in1 = in_id(b, tape);
  return emit(tape, std::move(n), a.shape(), std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(Op::kMul, a, b);
  Tape* tape = common_tape({&a, &b}, Op::kMul);
  std::vector<double> out(a.values());
  const double* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Node n;
  n.op = Op::kMul;
  n.in0 = in_id(a, tape);
  n.in1 = in_id(b, tape);
  n.a = a;
  n.b = b;
  return emit(tape, std::move(n), a.shape(), std::move(out));
}

Tensor scale(const Tensor& a, double factor) {
  Tape* tape = common_tape({&a}, Op::kScale);
  std::vector<double> out(a.values());
  for (double& v : out) v *= factor;
  Node n;
  n.op = Op::kScale;
  n.in0 = in_id(a, tape);
  n.p0 = factor;
  return emit(tape, std::move(n), a.shape(), std::move(out));
}

Tensor add_scalar(const Tensor& a, double offset) {
  Tape* tape = common_tape({&a}, Op::kAddScalar);
  std::vector<double> out(a.values());
  for (double& v : out) v += offset;
  Node n;
  n.op = Op::kAddScalar;
  n.in0 = in_id(a, tape);
  n.p0 = offset;
  return emit(tape, std::move(n), a.shape(), std::move(out));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2)) shape_error(Op::kMatmul, a, b);
  if (a.dim(1) != b.dim(0)) shape_error(Op::kMatmul, a, b);
  Tape* tape = common_tape({&a, &b}, Op::kMatmul);
  const int64_t m = a.dim(0), k = a.dim(1);
  const double* av = a.data();
  const double* bv = b.data();
  std::vector<int64_t> shape;
  std::vector<double> out;
  if (b.rank() == 1) {
    shape = {m};
    out.assign(static_cast<size_t>(m), 0.0);
    for (int64_t i = 0; i < m; ++i) {
      const double* row = av + i * k;
      double acc = 0.0;
      for (int64_t l = 0; l < k; ++l) acc += row[l] * bv[l];
      out[static_cast<size_t>(i)] = acc;
    }
  } else {
    const int64_t c = b.dim(1);
    shape = {m, c};
    out.assign(static_cast<size_t>(m * c), 0.0);
    for (int64_t i = 0; i < m; ++i) {
      const double* arow = av + i * k;
      double* orow = out.data() + i * c;
      for (int64_t l = 0; l < k; ++l) {
        const double ail = arow[l];
        const double* brow = bv + l * c;
        for (int64_t j = 0; j < c; ++j) orow[j] += ail * brow[j];
      }
    }
  }
  Node n;
  n.op = Op::kMatmul;
  n.in0 = in_id(a, tape);
  n.in1 = in_id(b, tape);
  n.a = a;
  n.b = b;
  return emit(tape, std::move(n), std::move(shape), std::move(out));
}

Tensor bias_add(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || a.dim(0) != bias.dim(0))
    shape_error(Op::kBiasAdd, a, bias);
  Tape* tape = common_tape({&a, &bias}, Op::kBiasAdd);
  const int64_t c = a.dim(0), l = a.dim(1);
  std::vector<double> out(a.values());
  const double* bv = bias.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t j = 0; j < l; ++j) out[static_cast<size_t>(ci * l + j)] += bv[ci];
  Node n;
  n.op = Op::kBiasAdd;
  n.in0 = in_id(a, tape);
  n.in1 = in_id(bias, tape);
  return emit(tape, std::move(n), a.shape(), std::move(out));
}

Tensor tanh(const Tensor& a) {
  return unary(Op::kTanh, a, [](double x) { return std::tanh(x); }, false, true);
}

Tensor relu(const Tensor& a) {
  return unary(Op::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; }, true, false);
}

Tensor softplus(const Tensor& a) {
  // log(1 + e^x), computed as max(x, 0) + log1p(e^-|x|) for stability
  return unary(
      Op::kSoftplus, a,
      [](double x) { return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x))); }, true,
      false);
}

Tensor sigmoid(const Tensor& a) {
  return unary(Op::kSigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, false, true);
}

Tensor exp(const Tensor& a) {
  return unary(Op::kExp, a, [](double x) { return std::exp(x); }, false, true);
}

Tensor log(const Tensor& a) {
  return unary(Op::kLog, a, [](double x) { return std::log(x); }, true, false);
}

Tensor abs(const Tensor& a) {
  return unary(Op::kAbs, a, [](double x) { return std::abs(x); }, true, false);
}

Tensor square(const Tensor& a) {
  return unary(Op::kSquare, a, [](double x) { return x * x; }, true, false);
}

Tensor sum(const Tensor& a) {
  Tape* tape = common_tape({&a}, Op::kSum);
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Node n;
  n.op = Op::kSum;
  n.in0 = in_id(a, tape);
  n.a = a;
  return emit(tape, std::move(n), {1}, {acc});
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DiffError("mean of empty tensor");
  Tape* tape = common_tape({&a}, Op::kMean);
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  acc /= static_cast<double>(a.size());
  Node n;
  n.op = Op::kMean;
  n.in0 = in_id(a, tape);
  n.a = a;
  return emit(tape, std::move(n), {1}, {acc});
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) shape_error(Op::kConcat, a, b);
  Tape* tape = common_tape({&a, &b}, Op::kConcat);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(a.size() + b.size()));
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  Node n;
  n.op = Op::kConcat;
  n.in0 = in_id(a, tape);
  n.in1 = in_id(b, tape);
  n.p0 = static_cast<double>(a.size());
  return emit(tape, std::move(n), {a.size() + b.size()}, std::move(out));
}

Tensor concat_all(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DiffError("concat_all of zero tensors");
  Tensor out = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) out = concat(out, parts[i]);
  return out;
}

Tensor slice(const Tensor& a, int64_t start, int64_t len) {
  if (a.rank() != 1 || start < 0 || len < 0 || start + len > a.size())
    throw DiffError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                    ") out of range for shape " + a.shape_str());
  Tape* tape = common_tape({&a}, Op::kSlice);
  std::vector<double> out(a.values().begin() + start, a.values().begin() + start + len);
  Node n;
  n.op = Op::kSlice;
  n.in0 = in_id(a, tape);
  n.a = a;
  n.p0 = static_cast<double>(start);
  return emit(tape, std::move(n), {len}, std::move(out));
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, int64_t stride) {
  if (input.rank() != 2 || kernel.rank() != 3 || input.dim(0) != kernel.dim(1))
    shape_error(Op::kConv1d, input, kernel);
  const int64_t ci_n = input.dim(0), l = input.dim(1);
  const int64_t co_n = kernel.dim(0), k = kernel.dim(2);
  if (stride < 1 || l < k)
    throw DiffError("conv1d: invalid stride " + std::to_string(stride) + " or input " +
                    input.shape_str() + " shorter than kernel " + kernel.shape_str());
  Tape* tape = common_tape({&input, &kernel}, Op::kConv1d);
  const int64_t lo = (l - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(co_n * lo), 0.0);
  const double* in = input.data();
  const double* ker = kernel.data();
  for (int64_t co = 0; co < co_n; ++co) {
    double* orow = out.data() + co * lo;
    for (int64_t ci = 0; ci < ci_n; ++ci) {
      const double* irow = in + ci * l;
      const double* krow = ker + (co * ci_n + ci) * k;
      for (int64_t o = 0; o < lo; ++o) {
        double acc = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) acc += irow[o * stride + kk] * krow[kk];
        orow[o] += acc;
      }
    }
  }
  Node n;
  n.op = Op::kConv1d;
  n.in0 = in_id(input, tape);
  n.in1 = in_id(kernel, tape);
  n.a = input;
  n.b = kernel;
  n.p0 = static_cast<double>(stride);
  return emit(tape, std::move(n), {co_n, lo}, std::move(out));
}

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
  int64_t count = 1;
  for (int64_t d : shape) count *= d;
  if (count != a.size())
    throw DiffError("reshape to " + shape_str(shape) + " from " + a.shape_str());
  Tape* tape = common_tape({&a}, Op::kReshape);
  Node n;
  n.op = Op::kReshape;
  n.in0 = in_id(a, tape);
  n.a = a;
  return emit(tape, std::move(n), std::move(shape), std::vector<double>(a.values()));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw DiffError("clamp: lo > hi");
  Tape* tape = common_tape({&a}, Op::kClamp);
  std::vector<double> out(a.values());
  for (double& v : out) v = v < lo ? lo : (v > hi ? hi : v);
  Node n;
  n.op = Op::kClamp;
  n.in0 = in_id(a, tape);
  n.a = a;
  n.p0 = lo;
  n.p1 = hi;
  return emit(tape, std::move(n), a.shape(), std::move(out));
}

Tensor gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& logvar) {
  require_same_shape(Op::kGaussianLogDensity, x, mean);
  require_same_shape(Op::kGaussianLogDensity, x, logvar);
  Tape* tape = common_tape({&x, &mean, &logvar}, Op::kGaussianLogDensity);
  std::vector<double> out(x.values());
  const double* mu = mean.data();
  const double* lv = logvar.data();
  for (size_t i = 0; i < out.size(); ++i) {
    const double d = out[i] - mu[i];
    out[i] = -0.5 * (d * d * std::exp(-lv[i]) + lv[i] + kLog2Pi);
  }
  Node n;
  n.op = Op::kGaussianLogDensity;
  n.in0 = in_id(x, tape);
  n.in1 = in_id(mean, tape);
  n.in2 = in_id(logvar, tape);
  n.a = x;
  n.b = mean;
  n.c = logvar;
  return emit(tape, std::move(n), x.shape(), std::move(out));
}

Tensor gaussian_sample(const Tensor& mean, const Tensor& logvar, const Tensor& noise) {
  require_same_shape(Op::kGaussianSample, mean, logvar);
  require_same_shape(Op::kGaussianSample, mean, noise);
  if (noise.tracked()) throw DiffError("gaussian_sample: noise must be a constant");
  Tape* tape = common_tape({&mean, &logvar}, Op::kGaussianSample);
  std::vector<double> out(mean.values());
  const double* lv = logvar.data();
  const double* eps = noise.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += std::exp(0.5 * lv[i]) * eps[i];
  Node n;
  n.op = Op::kGaussianSample;
  n.in0 = in_id(mean, tape);
  n.in1 = in_id(logvar, tape);
  n.a = mean;
  n.b = logvar;
  n.c = noise;
  return emit(tape, std::move(n), mean.shape(), std::move(out));
}

Tensor detach(const Tensor& a) { return a.detached(); }

Tensor gru_cell(const GruWeights& w, const Tensor& x, const Tensor& h) {
  Tensor z = sigmoid(add(add(matmul(w.wz, x), matmul(w.uz, h)), w.bz));
  Tensor r = sigmoid(add(add(matmul(w.wr, x), matmul(w.ur, h)), w.br));
  Tensor n = tanh(add(add(matmul(w.wn, x), mul(r, matmul(w.un, h))), w.bn));
  Tensor one_minus_z = add_scalar(scale(z, -1.0), 1.0);
  return add(mul(one_minus_z, n), mul(z, h));
}

}  // namespace modbot::diff
