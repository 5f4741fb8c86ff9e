#include "modbot/diff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "modbot/util/hash.hpp"

namespace modbot::diff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'B', 'T', 'S'};
constexpr uint32_t kFormatVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw CheckpointError("truncated checkpoint record");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void write_tensors(const std::string& path, const NamedTensors& tensors) {
  std::string body;
  for (const auto& [name, t] : tensors) {
    put<uint32_t>(body, static_cast<uint32_t>(name.size()));
    body.append(name);
    put<uint32_t>(body, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put<int64_t>(body, d);
    for (double v : t.values()) put<double>(body, v);
  }
  std::string head;
  head.append(kMagic, 4);
  put<uint32_t>(head, kFormatVersion);
  put<uint64_t>(head, tensors.size());
  put<uint64_t>(head, util::fnv1a64(body.data(), body.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open for writing: " + path);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw CheckpointError("write failed: " + path);
}

NamedTensors read_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open: " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 24 || std::memcmp(raw.data(), kMagic, 4) != 0)
    throw CheckpointError("not a tensor container: " + path);
  size_t pos = 4;
  const uint32_t version = take<uint32_t>(raw, pos);
  if (version != kFormatVersion)
    throw CheckpointError("unsupported container version " + std::to_string(version));
  const uint64_t count = take<uint64_t>(raw, pos);
  const uint64_t checksum = take<uint64_t>(raw, pos);
  const uint64_t actual = util::fnv1a64(raw.data() + pos, raw.size() - pos);
  if (checksum != actual)
    throw CheckpointError("checksum mismatch in " + path + ": header " + util::hex64(checksum) +
                          ", content " + util::hex64(actual));

  NamedTensors tensors;
  tensors.reserve(count);
  for (uint64_t r = 0; r < count; ++r) {
    const uint32_t name_len = take<uint32_t>(raw, pos);
    if (pos + name_len > raw.size()) throw CheckpointError("truncated checkpoint record");
    std::string name(raw.data() + pos, name_len);
    pos += name_len;
    const uint32_t rank = take<uint32_t>(raw, pos);
    std::vector<int64_t> shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = take<int64_t>(raw, pos);
      n *= shape[i];
    }
    std::vector<double> values(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) values[static_cast<size_t>(i)] = take<double>(raw, pos);
    tensors.emplace_back(std::move(name), Tensor::of(std::move(shape), std::move(values)));
  }
  if (pos != raw.size()) throw CheckpointError("trailing bytes in " + path);
  return tensors;
}

uint64_t checkpoint_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open: " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return util::fnv1a64(raw.data(), raw.size());
}

}  // namespace modbot::diff
