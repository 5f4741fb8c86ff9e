#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace modbot::util {

// FNV-1a 64-bit, used for file integrity checksums and config hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v);

}  // namespace modbot::util
