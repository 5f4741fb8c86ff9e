#include "modbot/sim/trajectory.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace modbot::sim {
namespace {

static_assert(std::endian::native == std::endian::little);

constexpr char kMagic[4] = {'M', 'B', 'T', 'J'};
constexpr uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& what) {
  throw std::runtime_error("trajectory file: " + what);
}

template <typename T>
void put(std::string& buf, const T& v) {
  const auto old = buf.size();
  buf.resize(old + sizeof(T));
  std::memcpy(buf.data() + old, &v, sizeof(T));
}

void put_string(std::string& buf, const std::string& s) {
  put(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

void put_doubles(std::string& buf, const double* data, size_t n) {
  put(buf, static_cast<uint32_t>(n));
  const auto old = buf.size();
  buf.resize(old + n * sizeof(double));
  std::memcpy(buf.data() + old, data, n * sizeof(double));
}

class Reader {
 public:
  Reader(const char* data, size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > size_) fail("truncated");
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<uint32_t>();
    if (pos_ + n > size_) fail("truncated");
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }

  std::vector<double> get_doubles() {
    const auto n = get<uint32_t>();
    if (pos_ + n * sizeof(double) > size_) fail("truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), data_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }

  size_t pos() const { return pos_; }

 private:
  const char* data_;
  size_t size_;
  size_t pos_ = 0;
};

}  // namespace

uint32_t TrajLog::design_index(const std::string& name) {
  for (uint32_t i = 0; i < designs.size(); ++i)
    if (designs[i] == name) return i;
  designs.push_back(name);
  return static_cast<uint32_t>(designs.size() - 1);
}

uint32_t TrajLog::env_index(const std::string& name) {
  for (uint32_t i = 0; i < envs.size(); ++i)
    if (envs[i] == name) return i;
  envs.push_back(name);
  return static_cast<uint32_t>(envs.size() - 1);
}

void write_trajectories(const std::string& path, const TrajLog& log) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put(buf, kVersion);
  put(buf, static_cast<uint32_t>(log.designs.size()));
  for (const auto& name : log.designs) put_string(buf, name);
  put(buf, static_cast<uint32_t>(log.envs.size()));
  for (const auto& name : log.envs) put_string(buf, name);
  put(buf, static_cast<uint64_t>(log.records.size()));
  for (const auto& r : log.records) {
    std::string rec;
    put(rec, r.design);
    put(rec, r.env);
    put(rec, r.level);
    put_doubles(rec, r.state.data(), r.state.size());
    put_doubles(rec, r.action.data(), r.action.size());
    put(rec, r.reward);
    put_doubles(rec, r.window.data(), r.window.size());
    put(buf, static_cast<uint64_t>(rec.size()));
    buf.append(rec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail("write to '" + path + "' failed");
}

TrajLog read_trajectories(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf.data(), buf.size());
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kMagic, 4) != 0) fail("bad magic");
  const auto version = r.get<uint32_t>();
  if (version != kVersion) fail("unsupported version " + std::to_string(version));

  TrajLog log;
  const auto nd = r.get<uint32_t>();
  for (uint32_t i = 0; i < nd; ++i) log.designs.push_back(r.get_string());
  const auto ne = r.get<uint32_t>();
  for (uint32_t i = 0; i < ne; ++i) log.envs.push_back(r.get_string());
  const auto count = r.get<uint64_t>();
  log.records.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<uint64_t>();
    const auto start = r.pos();
    TrajRecord rec;
    rec.design = r.get<uint32_t>();
    rec.env = r.get<uint32_t>();
    rec.level = r.get<int32_t>();
    rec.state = r.get_doubles();
    rec.action = r.get_doubles();
    rec.reward = r.get<double>();
    const auto window = r.get_doubles();
    if (window.size() != rec.window.size()) fail("bad window length");
    std::copy(window.begin(), window.end(), rec.window.begin());
    if (r.pos() - start != len) fail("record length mismatch");
    log.records.push_back(std::move(rec));
  }
  return log;
}

void export_trajectories_csv(const std::string& path, const TrajLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open '" + path + "' for writing");
  out << "design,env,level,reward,state,action,window\n";
  auto join = [](const double* v, size_t n) {
    std::string s;
    char num[32];
    for (size_t i = 0; i < n; ++i) {
      std::snprintf(num, sizeof(num), "%.9g", v[i]);
      if (i) s += ' ';
      s += num;
    }
    return s;
  };
  for (const auto& r : log.records) {
    out << log.designs[r.design] << ',' << log.envs[r.env] << ',' << r.level << ','
        << r.reward << ',' << join(r.state.data(), r.state.size()) << ','
        << join(r.action.data(), r.action.size()) << ','
        << join(r.window.data(), r.window.size()) << '\n';
  }
}

}  // namespace modbot::sim
