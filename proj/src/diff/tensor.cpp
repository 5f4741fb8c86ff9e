#include "modbot/diff/tensor.hpp"

#include <numeric>
#include <sstream>

namespace modbot::diff {

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

static int64_t shape_size(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DiffError("negative dimension in shape " + diff::shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  Tensor t;
  int64_t n = shape_size(shape);
  t.shape_ = std::move(shape);
  t.storage_ = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : *t.storage_) v = value;
  return t;
}

Tensor Tensor::of(std::vector<double> values) {
  Tensor t;
  t.shape_ = {static_cast<int64_t>(values.size())};
  t.storage_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::of(std::vector<int64_t> shape, std::vector<double> values) {
  if (shape_size(shape) != static_cast<int64_t>(values.size()))
    throw DiffError("value count " + std::to_string(values.size()) + " does not match shape " +
                    diff::shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.storage_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::scalar_of(double value) { return of({1}, {value}); }

int64_t Tensor::size() const { return storage_ ? static_cast<int64_t>(storage_->size()) : 0; }

double Tensor::scalar() const {
  if (size() != 1) throw DiffError("scalar() on tensor of shape " + diff::shape_str(shape_));
  return (*storage_)[0];
}

std::vector<double>& Tensor::mut() {
  if (tracked()) throw DiffError("mutation of a tensor recorded on a tape");
  return *storage_;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  t.tape_ = nullptr;
  return t;
}

std::string Tensor::shape_str() const { return diff::shape_str(shape_); }

}  // namespace modbot::diff
