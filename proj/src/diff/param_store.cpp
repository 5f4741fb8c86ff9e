#include "modbot/diff/param_store.hpp"

#include "modbot/util/hash.hpp"

namespace modbot::diff {

Tensor& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (entries_.count(name)) throw DiffError("duplicate parameter name: " + name);
  Entry e;
  e.value = std::move(value);
  e.momentum.assign(static_cast<size_t>(e.value.size()), 0.0);
  e.trainable = trainable;
  auto [it, ok] = entries_.emplace(name, std::move(e));
  (void)ok;
  order_.push_back(name);
  return it->second.value;
}

bool ParamStore::has(const std::string& name) const { return entries_.count(name) > 0; }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DiffError("unknown parameter: " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DiffError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParamStore::value(const std::string& name) const { return entry(name).value; }
bool ParamStore::trainable(const std::string& name) const { return entry(name).trainable; }

void ParamStore::snapshot() {
  std::map<std::string, Entry> copy;
  for (const auto& [name, e] : entries_) {
    Entry c;
    c.value = Tensor::of(e.value.shape(), e.value.values());
    c.momentum = e.momentum;
    c.trainable = e.trainable;
    copy.emplace(name, std::move(c));
  }
  snapshots_.push_back(std::move(copy));
}

void ParamStore::restore_top() {
  if (snapshots_.empty()) throw DiffError("restore with no snapshot on the stack");
  for (const auto& [name, saved] : snapshots_.back()) {
    Entry& e = entry(name);
    e.value.mut() = saved.value.values();
    e.momentum = saved.momentum;
  }
}

void ParamStore::pop_snapshot() {
  if (snapshots_.empty()) throw DiffError("pop with no snapshot on the stack");
  snapshots_.pop_back();
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& name : order_) {
    const Entry& e = entries_.at(name);
    h = util::fnv1a64(name.data(), name.size(), h);
    h = util::fnv1a64(e.value.data(), sizeof(double) * static_cast<size_t>(e.value.size()), h);
  }
  return h;
}

std::vector<std::pair<std::string, Tensor>> ParamStore::export_tensors(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(order_.size());
  for (const auto& name : order_) {
    const Entry& e = entries_.at(name);
    out.emplace_back(prefix + name, Tensor::of(e.value.shape(), e.value.values()));
  }
  return out;
}

size_t ParamStore::load_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                                const std::string& prefix) {
  size_t loaded = 0;
  for (const auto& [full_name, tensor] : tensors) {
    if (full_name.rfind(prefix, 0) != 0) continue;
    const std::string name = full_name.substr(prefix.size());
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DiffError("checkpoint entry has no parameter: " + full_name);
    Entry& e = it->second;
    if (e.value.shape() != tensor.shape())
      throw DiffError("shape mismatch for " + full_name + ": expected " + e.value.shape_str() +
                      ", found " + tensor.shape_str());
    e.value.mut() = tensor.values();
    std::fill(e.momentum.begin(), e.momentum.end(), 0.0);
    ++loaded;
  }
  return loaded;
}

void sgd_step(ParamStore& store, const GradMap& grads, double lr, double momentum) {
  for (const auto& name : store.order_) {
    ParamStore::Entry& e = store.entries_.at(name);
    if (!e.trainable) continue;
    auto git = grads.find(name);
    if (git == grads.end()) throw DiffError("missing gradient for parameter: " + name);
    const std::vector<double>& g = git->second;
    if (g.size() != e.momentum.size())
      throw DiffError("gradient size mismatch for parameter: " + name);
    std::vector<double>& w = e.value.mut();
    for (size_t i = 0; i < w.size(); ++i) {
      e.momentum[i] = momentum * e.momentum[i] + g[i];
      w[i] -= lr * e.momentum[i];
    }
  }
}

Binding::Binding(Tape& tape, const ParamStore& store, bool frozen) : tape_(&tape) {
  names_ = store.names();
  for (const auto& name : names_) {
    const Tensor& v = store.value(name);
    bound_.emplace(name, frozen ? v : tape.leaf(v));
  }
}

const Tensor& Binding::operator()(const std::string& name) const {
  auto it = bound_.find(name);
  if (it == bound_.end()) throw DiffError("binding has no parameter: " + name);
  return it->second;
}

GradMap backward(const Tensor& loss, const Binding& binding) {
  binding.tape().backward(loss);
  GradMap grads;
  for (const auto& name : binding.names()) {
    const Tensor& t = binding(name);
    grads[name] = t.tracked() ? binding.tape().grad(t)
                              : std::vector<double>(static_cast<size_t>(t.size()), 0.0);
  }
  return grads;
}

}  // namespace modbot::diff
