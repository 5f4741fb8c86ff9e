#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "modbot/diff/tape.hpp"
#include "modbot/diff/tensor.hpp"

namespace modbot::diff {

using GradMap = std::map<std::string, std::vector<double>>;

// Named parameter leaves plus their optimizer momentum buffers. Snapshots
// capture values and momentum bit-exactly and form a stack.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value, bool trainable = true);
  bool has(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  bool trainable(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  void snapshot();          // push a copy of values + momentum
  void restore_top();       // copy the top snapshot back, keep it on the stack
  void pop_snapshot();      // discard the top snapshot
  size_t snapshot_depth() const { return snapshots_.size(); }

  // Checksum over all values, for freeze checks and reports.
  uint64_t checksum() const;

  // (name, tensor) pairs in insertion order, names prefixed.
  std::vector<std::pair<std::string, Tensor>> export_tensors(const std::string& prefix) const;
  // Loads values for entries matching prefix; validates shapes and reports
  // expected-vs-found on mismatch. Returns the number of entries loaded.
  size_t load_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                      const std::string& prefix);

 private:
  friend void sgd_step(ParamStore&, const GradMap&, double, double);
  struct Entry {
    Tensor value;
    std::vector<double> momentum;
    bool trainable = true;
  };
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
  std::vector<std::map<std::string, Entry>> snapshots_;
};

// One SGD + momentum update: v = momentum * v + g; w -= lr * v.
// Every trainable entry must have a gradient in grads.
void sgd_step(ParamStore& store, const GradMap& grads, double lr, double momentum = 0.9);

// Per-tape view of a store. Trainable construction records one leaf per
// entry in name order; frozen construction exposes plain constants so no
// gradients flow and the tape stays small.
class Binding {
 public:
  Binding(Tape& tape, const ParamStore& store, bool frozen = false);
  const Tensor& operator()(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  std::vector<std::string> names_;
  std::map<std::string, Tensor> bound_;
};

// Runs tape backward from loss and collects gradients for every bound leaf
// (zeros for leaves the loss does not reach).
GradMap backward(const Tensor& loss, const Binding& binding);

}  // namespace modbot::diff
