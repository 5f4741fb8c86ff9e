#pragma once

#include <string>
#include <utility>
#include <vector>

#include "modbot/diff/tensor.hpp"

namespace modbot::diff {

struct CheckpointError : DiffError {
  explicit CheckpointError(const std::string& what) : DiffError(what) {}
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Binary container: magic, format version, record count, integrity checksum,
// then (name, shape, little-endian float64 values) records.
void write_tensors(const std::string& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::string& path);

// Checksum of a container on disk (also usable as a checkpoint id).
uint64_t checkpoint_checksum(const std::string& path);

}  // namespace modbot::diff
