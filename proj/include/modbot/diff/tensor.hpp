#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace modbot::diff {

class Tape;

struct DiffError : std::runtime_error {
  explicit DiffError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major tensor of doubles. Copying a Tensor shares storage; values
// that participate in a recorded graph are treated as immutable. A tensor is
// either a constant (node < 0) or the output of a tape node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor of(std::vector<double> values);  // 1-D
  static Tensor of(std::vector<int64_t> shape, std::vector<double> values);
  static Tensor scalar_of(double value);

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const;
  bool defined() const { return storage_ != nullptr; }

  const double* data() const { return storage_->data(); }
  const std::vector<double>& values() const { return *storage_; }
  double at(int64_t i) const { return (*storage_)[static_cast<size_t>(i)]; }
  double at(int64_t i, int64_t j) const { return (*storage_)[static_cast<size_t>(i * shape_[1] + j)]; }
  double scalar() const;

  // Mutable access; only legal for tensors not recorded on a tape.
  std::vector<double>& mut();

  int64_t node() const { return node_; }
  Tape* tape() const { return tape_; }
  bool tracked() const { return node_ >= 0; }

  // Same values, not connected to any tape. Shares storage.
  Tensor detached() const;

  std::string shape_str() const;

 private:
  friend class Tape;
  std::vector<int64_t> shape_;
  std::shared_ptr<std::vector<double>> storage_;
  int64_t node_ = -1;
  Tape* tape_ = nullptr;
};

std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace modbot::diff
