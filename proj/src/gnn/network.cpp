#include "modbot/gnn/network.hpp"

#include <cmath>
#include <utility>

#include "modbot/util/hash.hpp"
#include "modbot/util/rng.hpp"

namespace modbot::gnn {

using design::DesignGraph;
using design::ModuleKind;
using diff::Tensor;

namespace {

constexpr ModuleKind kKinds[] = {ModuleKind::kBody, ModuleKind::kLeg, ModuleKind::kWheel};

bool role_has_terrain(Role role) { return role != Role::kTorque; }

// Orthogonal rows when rows <= cols, orthogonal columns otherwise; trailing
// dims flatten into columns. Gain 1.
Tensor orthogonal(std::vector<int64_t> shape, uint64_t seed) {
  int64_t rows = shape[0];
  int64_t cols = 1;
  for (size_t i = 1; i < shape.size(); ++i) cols *= shape[i];
  util::Rng rng(seed);
  std::vector<double> w(static_cast<size_t>(rows * cols));
  for (double& v : w) v = rng.gaussian();
  const bool by_rows = rows <= cols;
  const int64_t n = by_rows ? rows : cols;
  const int64_t len = by_rows ? cols : rows;
  auto at = [&](int64_t v, int64_t i) -> double& {
    return by_rows ? w[static_cast<size_t>(v * cols + i)] : w[static_cast<size_t>(i * cols + v)];
  };
  for (int64_t v = 0; v < n; ++v) {
    double norm2 = 0.0;
    do {
      for (int64_t u = 0; u < v; ++u) {
        double dot = 0.0;
        for (int64_t i = 0; i < len; ++i) dot += at(v, i) * at(u, i);
        for (int64_t i = 0; i < len; ++i) at(v, i) -= dot * at(u, i);
      }
      norm2 = 0.0;
      for (int64_t i = 0; i < len; ++i) norm2 += at(v, i) * at(v, i);
      if (norm2 < 1e-12) {
        for (int64_t i = 0; i < len; ++i) at(v, i) = rng.gaussian();
      }
    } while (norm2 < 1e-12);
    const double inv = 1.0 / std::sqrt(norm2);
    for (int64_t i = 0; i < len; ++i) at(v, i) *= inv;
  }
  return Tensor::of(std::move(shape), std::move(w));
}

uint64_t name_tag(const std::string& s) { return util::fnv1a64(s); }

struct KindWeights {
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor msg_w, msg_b;
  diff::GruWeights gru;
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;
  bool has_dec = false;
};

KindWeights kind_weights(const diff::Binding& w, Role role, ModuleKind kind) {
  const std::string base = design::kind_name(kind);
  KindWeights kw;
  kw.enc_w1 = w(base + "/enc/w1");
  kw.enc_b1 = w(base + "/enc/b1");
  kw.enc_w2 = w(base + "/enc/w2");
  kw.enc_b2 = w(base + "/enc/b2");
  kw.msg_w = w(base + "/msg/w");
  kw.msg_b = w(base + "/msg/b");
  kw.gru.wz = w(base + "/gru/wz");
  kw.gru.uz = w(base + "/gru/uz");
  kw.gru.bz = w(base + "/gru/bz");
  kw.gru.wr = w(base + "/gru/wr");
  kw.gru.ur = w(base + "/gru/ur");
  kw.gru.br = w(base + "/gru/br");
  kw.gru.wn = w(base + "/gru/wn");
  kw.gru.un = w(base + "/gru/un");
  kw.gru.bn = w(base + "/gru/bn");
  if (output_dim(role, kind) > 0) {
    kw.has_dec = true;
    kw.dec_w1 = w(base + "/dec/w1");
    kw.dec_b1 = w(base + "/dec/b1");
    kw.dec_w2 = w(base + "/dec/w2");
    kw.dec_b2 = w(base + "/dec/b2");
  }
  return kw;
}

// Encode every node, run the message/update rounds over the star edges, and
// decode. Advances the hidden map in place; nodes of a kind with no output
// for the role return an undefined tensor.
std::vector<Tensor> run_graph(const NodeNetworkSet& net, const diff::Binding& w,
                              const DesignGraph& d, const std::vector<Tensor>& inputs,
                              HiddenStateMap& hmap) {
  const int n = d.node_count();
  if (static_cast<int>(inputs.size()) != n) throw GnnError("node input count mismatch");
  if (static_cast<int>(hmap.h.size()) != n)
    throw GnnError("hidden map keyed by a different design");
  if (d.limb_count() < 1) throw GnnError("design has no limbs");
  const KindWeights kw[3] = {kind_weights(w, net.role(), ModuleKind::kBody),
                             kind_weights(w, net.role(), ModuleKind::kLeg),
                             kind_weights(w, net.role(), ModuleKind::kWheel)};
  auto kind_of = [&](int i) -> const KindWeights& {
    return kw[static_cast<int>(d.nodes[static_cast<size_t>(i)].kind)];
  };

  std::vector<Tensor> e(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const KindWeights& k = kind_of(i);
    const Tensor t1 =
        diff::tanh(diff::add(diff::matmul(k.enc_w1, inputs[static_cast<size_t>(i)]), k.enc_b1));
    e[static_cast<size_t>(i)] = diff::tanh(diff::add(diff::matmul(k.enc_w2, t1), k.enc_b2));
  }

  for (int round = 0; round < net.config().rounds; ++round) {
    std::vector<Tensor> m(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const Tensor& src = round == 0 ? e[static_cast<size_t>(i)] : hmap.h[static_cast<size_t>(i)];
      m[static_cast<size_t>(i)] =
          diff::tanh(diff::add(diff::matmul(kind_of(i).msg_w, src), kind_of(i).msg_b));
    }
    Tensor body_agg = m[1];
    for (int i = 2; i < n; ++i) body_agg = diff::add(body_agg, m[static_cast<size_t>(i)]);
    body_agg = diff::scale(body_agg, 1.0 / d.limb_count());
    for (int i = 0; i < n; ++i) {
      const Tensor& agg = i == 0 ? body_agg : m[0];
      hmap.h[static_cast<size_t>(i)] = diff::gru_cell(
          kind_of(i).gru, diff::concat(e[static_cast<size_t>(i)], agg), hmap.h[static_cast<size_t>(i)]);
    }
  }

  std::vector<Tensor> outs(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const KindWeights& k = kind_of(i);
    if (!k.has_dec) continue;
    const Tensor t1 =
        diff::tanh(diff::add(diff::matmul(k.dec_w1, hmap.h[static_cast<size_t>(i)]), k.dec_b1));
    outs[static_cast<size_t>(i)] = diff::add(diff::matmul(k.dec_w2, t1), k.dec_b2);
  }
  return outs;
}

Tensor encode_terrain(NodeNetworkSet& net, const diff::Binding& w,
                      const std::vector<double>& window, bool train_mode) {
  if (static_cast<int>(window.size()) != sim::kWindowSize)
    throw GnnError("terrain window must have " + std::to_string(sim::kWindowSize) + " cells");
  const Tensor win = Tensor::of({1, static_cast<int64_t>(window.size())}, window);
  const Tensor c1 = diff::tanh(
      diff::bias_add(diff::conv1d(win, w("body/terrain/conv1_w"), 2), w("body/terrain/conv1_b")));
  const Tensor c2 = diff::tanh(
      diff::bias_add(diff::conv1d(c1, w("body/terrain/conv2_w"), 2), w("body/terrain/conv2_b")));
  const Tensor flat = diff::reshape(c2, {kTerrainFeatures});
  std::vector<double> mu, inv_sigma;
  net.terrain_norm(mu, inv_sigma);
  if (train_mode) net.update_terrain_stats(flat.values());
  return diff::mul(diff::sub(flat, Tensor::of(std::move(mu))), Tensor::of(std::move(inv_sigma)));
}

Tensor denorm_delta(const NodeNetworkSet& net, ModuleKind kind, const Tensor& raw) {
  const std::string base = design::kind_name(kind);
  const Tensor sigma = Tensor::of(net.params().value(base + "/delta/sigma").values());
  const Tensor mu = Tensor::of(net.params().value(base + "/delta/mu").values());
  return diff::add(diff::mul(raw, sigma), mu);
}

double angle_scale(ModuleKind kind) {
  return kind == ModuleKind::kWheel ? scales::kWheelAngle : scales::kLegAngle;
}

}  // namespace

const char* role_name(Role role) {
  switch (role) {
    case Role::kPolicy: return "policy";
    case Role::kModel: return "model";
    case Role::kTorque: return "torque";
  }
  return "?";
}

int input_dim(Role role, ModuleKind kind) {
  const int joints = design::joints_of(kind);
  switch (role) {
    case Role::kPolicy:
      return kind == ModuleKind::kBody ? 2 + kTerrainFeatures : 2 * joints + 1;
    case Role::kModel:
      return kind == ModuleKind::kBody ? 4 + 1 + kTerrainFeatures : 3 * joints + 1;
    case Role::kTorque:
      return kind == ModuleKind::kBody ? 4 + 1 : 3 * joints + 1;
  }
  return 0;
}

int output_dim(Role role, ModuleKind kind) {
  const int joints = design::joints_of(kind);
  switch (role) {
    case Role::kPolicy:
      return kind == ModuleKind::kBody ? 0 : 2 * joints;
    case Role::kModel:
      return kind == ModuleKind::kBody ? sim::kBodyStateDim : 2 * joints;
    case Role::kTorque:
      return kind == ModuleKind::kBody ? 0 : joints;
  }
  return 0;
}

NodeNetworkSet::NodeNetworkSet(Role role, const NetConfig& cfg, uint64_t seed)
    : role_(role), cfg_(cfg) {
  if (cfg.hidden < 1 || cfg.enc_hidden < 1 || cfg.rounds < 1)
    throw GnnError("network widths and round count must be positive");
  const int64_t h = cfg.hidden;
  const int64_t eh = cfg.enc_hidden;
  auto add_orth = [&](const std::string& name, std::vector<int64_t> shape) {
    params_.add(name, orthogonal(std::move(shape), util::mix({seed, name_tag(name)})));
  };
  auto add_zeros = [&](const std::string& name, std::vector<int64_t> shape,
                       bool trainable = true) {
    params_.add(name, Tensor::zeros(std::move(shape)), trainable);
  };
  for (ModuleKind kind : kKinds) {
    const std::string base = design::kind_name(kind);
    const int64_t in = input_dim(role, kind);
    const int64_t out = output_dim(role, kind);
    add_orth(base + "/enc/w1", {eh, in});
    add_zeros(base + "/enc/b1", {eh});
    add_orth(base + "/enc/w2", {h, eh});
    add_zeros(base + "/enc/b2", {h});
    add_orth(base + "/msg/w", {h, h});
    add_zeros(base + "/msg/b", {h});
    for (const char* gate : {"z", "r", "n"}) {
      add_orth(base + "/gru/w" + std::string(gate), {h, 2 * h});
      add_orth(base + "/gru/u" + std::string(gate), {h, h});
      add_zeros(base + "/gru/b" + std::string(gate), {h});
    }
    if (out > 0) {
      add_orth(base + "/dec/w1", {eh, h});
      add_zeros(base + "/dec/b1", {eh});
      add_zeros(base + "/dec/w2", {out, eh});
      add_zeros(base + "/dec/b2", {out});
    }
    if (role == Role::kModel) {
      add_zeros(base + "/delta/mu", {out}, false);
      params_.add(base + "/delta/sigma", Tensor::full({out}, 1.0), false);
    }
  }
  if (role_has_terrain(role)) {
    add_orth("body/terrain/conv1_w", {8, 1, 5});
    add_zeros("body/terrain/conv1_b", {8});
    add_orth("body/terrain/conv2_w", {8, 8, 3});
    add_zeros("body/terrain/conv2_b", {8});
    add_zeros("body/terrain/mu", {kTerrainFeatures}, false);
    add_zeros("body/terrain/m2", {kTerrainFeatures}, false);
    add_zeros("body/terrain/count", {1}, false);
  }
}

void NodeNetworkSet::update_terrain_stats(const std::vector<double>& features) {
  if (!role_has_terrain(role_)) throw GnnError("role has no terrain encoder");
  if (static_cast<int>(features.size()) != kTerrainFeatures)
    throw GnnError("terrain feature count mismatch");
  std::vector<double> mu = params_.value("body/terrain/mu").values();
  std::vector<double> m2 = params_.value("body/terrain/m2").values();
  double count = params_.value("body/terrain/count").at(0);
  count += 1.0;
  for (int i = 0; i < kTerrainFeatures; ++i) {
    const size_t k = static_cast<size_t>(i);
    const double delta = features[k] - mu[k];
    mu[k] += delta / count;
    m2[k] += delta * (features[k] - mu[k]);
  }
  params_.value("body/terrain/mu") = Tensor::of(std::move(mu));
  params_.value("body/terrain/m2") = Tensor::of(std::move(m2));
  params_.value("body/terrain/count") = Tensor::of({count});
}

void NodeNetworkSet::terrain_norm(std::vector<double>& mu, std::vector<double>& inv_sigma) const {
  if (!role_has_terrain(role_)) throw GnnError("role has no terrain encoder");
  mu = params_.value("body/terrain/mu").values();
  const std::vector<double>& m2 = params_.value("body/terrain/m2").values();
  const double count = params_.value("body/terrain/count").at(0);
  inv_sigma.resize(m2.size());
  for (size_t i = 0; i < m2.size(); ++i) {
    const double var = count > 0.5 ? m2[i] / count : 1.0;
    inv_sigma[i] = 1.0 / std::sqrt(var + 1e-5);
  }
}

void NodeNetworkSet::set_delta_stats(ModuleKind kind, const std::vector<double>& mu,
                                     const std::vector<double>& sigma) {
  if (role_ != Role::kModel) throw GnnError("delta stats exist only on the model role");
  const std::string base = design::kind_name(kind);
  const int64_t want = params_.value(base + "/delta/mu").size();
  if (static_cast<int64_t>(mu.size()) != want || static_cast<int64_t>(sigma.size()) != want)
    throw GnnError("delta stat size mismatch for " + base);
  for (double s : sigma)
    if (!(s > 0.0)) throw GnnError("delta sigma must be positive");
  params_.value(base + "/delta/mu") = Tensor::of(mu);
  params_.value(base + "/delta/sigma") = Tensor::of(sigma);
}

HiddenStateMap zero_hidden(const DesignGraph& d, const NetConfig& cfg) {
  HiddenStateMap map;
  map.h.assign(static_cast<size_t>(d.node_count()), Tensor());
  for (auto& t : map.h) t = Tensor::zeros({cfg.hidden});
  return map;
}

std::vector<Tensor> policy_node_inputs(const DesignGraph& d, const sim::Observation& obs) {
  std::vector<Tensor> in(static_cast<size_t>(d.node_count()));
  in[0] = Tensor::of({obs.pitch * scales::kPitch, obs.pitch_rate * scales::kPitchRate});
  for (int i = 1; i < d.node_count(); ++i) {
    const auto& node = d.nodes[static_cast<size_t>(i)];
    const int off = d.joint_offset(i);
    const int nj = design::joints_of(node.kind);
    std::vector<double> v;
    v.reserve(static_cast<size_t>(2 * nj + 1));
    for (int j = 0; j < nj; ++j)
      v.push_back(obs.q[static_cast<size_t>(off + j)] * angle_scale(node.kind));
    for (int j = 0; j < nj; ++j)
      v.push_back(obs.qd[static_cast<size_t>(off + j)] * scales::kJointRate);
    v.push_back(node.attachment_x);
    in[static_cast<size_t>(i)] = Tensor::of(std::move(v));
  }
  return in;
}

std::vector<Tensor> policy_node_inputs(const DesignGraph& d, const Tensor& state) {
  std::vector<Tensor> in(static_cast<size_t>(d.node_count()));
  in[0] = diff::concat(diff::scale(diff::slice(state, 2, 1), scales::kPitch),
                       diff::scale(diff::slice(state, 5, 1), scales::kPitchRate));
  for (int i = 1; i < d.node_count(); ++i) {
    const auto& node = d.nodes[static_cast<size_t>(i)];
    const int off = d.joint_offset(i);
    const int nj = design::joints_of(node.kind);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(2 * nj + 1));
    for (int j = 0; j < nj; ++j)
      parts.push_back(diff::scale(diff::slice(state, sim::kBodyStateDim + 2 * (off + j), 1),
                                  angle_scale(node.kind)));
    for (int j = 0; j < nj; ++j)
      parts.push_back(diff::scale(diff::slice(state, sim::kBodyStateDim + 2 * (off + j) + 1, 1),
                                  scales::kJointRate));
    parts.push_back(Tensor::scalar_of(node.attachment_x));
    in[static_cast<size_t>(i)] = diff::concat_all(parts);
  }
  return in;
}

std::vector<Tensor> model_node_inputs(const DesignGraph& d, const Tensor& state,
                                      const Tensor& action) {
  std::vector<Tensor> in(static_cast<size_t>(d.node_count()));
  in[0] = diff::concat_all({diff::scale(diff::slice(state, 2, 1), scales::kPitch),
                            diff::scale(diff::slice(state, 3, 2), scales::kLinearRate),
                            diff::scale(diff::slice(state, 5, 1), scales::kPitchRate),
                            diff::scale(diff::mean(diff::abs(action)), scales::kAction)});
  for (int i = 1; i < d.node_count(); ++i) {
    const auto& node = d.nodes[static_cast<size_t>(i)];
    const int off = d.joint_offset(i);
    const int nj = design::joints_of(node.kind);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(3 * nj + 1));
    for (int j = 0; j < nj; ++j)
      parts.push_back(diff::scale(diff::slice(state, sim::kBodyStateDim + 2 * (off + j), 1),
                                  angle_scale(node.kind)));
    for (int j = 0; j < nj; ++j)
      parts.push_back(diff::scale(diff::slice(state, sim::kBodyStateDim + 2 * (off + j) + 1, 1),
                                  scales::kJointRate));
    for (int j = 0; j < nj; ++j)
      parts.push_back(diff::scale(diff::slice(action, off + j, 1), scales::kAction));
    parts.push_back(Tensor::scalar_of(node.attachment_x));
    in[static_cast<size_t>(i)] = diff::concat_all(parts);
  }
  return in;
}

std::vector<Tensor> torque_node_inputs(const DesignGraph& d, const Tensor& state,
                                       const Tensor& action) {
  return model_node_inputs(d, state, action);
}

PolicyTensors policy_forward(NodeNetworkSet& net, const diff::Binding& w, const DesignGraph& d,
                             const std::vector<Tensor>& inputs, const std::vector<double>& window,
                             HiddenStateMap& h, bool train_mode) {
  if (net.role() != Role::kPolicy) throw GnnError("policy_forward needs a policy-role network");
  std::vector<Tensor> in = inputs;
  if (in.empty()) throw GnnError("node input count mismatch");
  in[0] = diff::concat(in[0], encode_terrain(net, w, window, train_mode));
  const std::vector<Tensor> outs = run_graph(net, w, d, in, h);
  std::vector<Tensor> means, logvars;
  means.reserve(static_cast<size_t>(d.limb_count()));
  logvars.reserve(static_cast<size_t>(d.limb_count()));
  for (int i = 1; i < d.node_count(); ++i) {
    const int nj = design::joints_of(d.nodes[static_cast<size_t>(i)].kind);
    means.push_back(diff::slice(outs[static_cast<size_t>(i)], 0, nj));
    logvars.push_back(diff::slice(outs[static_cast<size_t>(i)], nj, nj));
  }
  PolicyTensors out;
  out.mean = diff::concat_all(means);
  out.logvar = diff::clamp(diff::concat_all(logvars), -8.0, 2.0);
  return out;
}

Tensor model_forward(NodeNetworkSet& net, const diff::Binding& w, const DesignGraph& d,
                     const Tensor& state, const Tensor& action, const std::vector<double>& window,
                     bool train_mode) {
  if (net.role() != Role::kModel) throw GnnError("model_forward needs a model-role network");
  std::vector<Tensor> in = model_node_inputs(d, state, action);
  in[0] = diff::concat(in[0], encode_terrain(net, w, window, train_mode));
  HiddenStateMap h = zero_hidden(d, net.config());
  const std::vector<Tensor> outs = run_graph(net, w, d, in, h);
  std::vector<Tensor> deltas;
  deltas.reserve(static_cast<size_t>(d.node_count()));
  for (int i = 0; i < d.node_count(); ++i) {
    const ModuleKind kind = d.nodes[static_cast<size_t>(i)].kind;
    deltas.push_back(denorm_delta(net, kind, outs[static_cast<size_t>(i)]));
  }
  return diff::add(state, diff::concat_all(deltas));
}

Tensor torque_forward(NodeNetworkSet& net, const diff::Binding& w, const DesignGraph& d,
                      const Tensor& state, const Tensor& action) {
  if (net.role() != Role::kTorque) throw GnnError("torque_forward needs a torque-role network");
  const std::vector<Tensor> in = torque_node_inputs(d, state, action);
  HiddenStateMap h = zero_hidden(d, net.config());
  const std::vector<Tensor> outs = run_graph(net, w, d, in, h);
  std::vector<Tensor> parts;
  parts.reserve(static_cast<size_t>(d.limb_count()));
  for (int i = 1; i < d.node_count(); ++i) parts.push_back(outs[static_cast<size_t>(i)]);
  return diff::concat_all(parts);
}

PolicyOutput policy_step(NodeNetworkSet& net, const DesignGraph& d, const sim::Observation& obs,
                         HiddenStateMap& h) {
  diff::Tape tape;
  const diff::Binding w(tape, net.params(), true);
  const std::vector<double> window(obs.window.begin(), obs.window.end());
  const PolicyTensors out =
      policy_forward(net, w, d, policy_node_inputs(d, obs), window, h, false);
  return {out.mean.values(), out.logvar.values()};
}

sim::RobotState model_step(NodeNetworkSet& net, const DesignGraph& d, const sim::RobotState& s,
                           const std::vector<double>& a, const std::vector<double>& window) {
  diff::Tape tape;
  const diff::Binding w(tape, net.params(), true);
  const Tensor next = model_forward(net, w, d, Tensor::of(sim::state_vector(s)), Tensor::of(a),
                                    window, false);
  sim::RobotState out = sim::state_from_vector(d, next.values());
  out.pending_action = a;
  out.failed = s.failed;
  return out;
}

std::vector<double> torque_step(NodeNetworkSet& net, const DesignGraph& d,
                                const sim::RobotState& s, const std::vector<double>& a) {
  diff::Tape tape;
  const diff::Binding w(tape, net.params(), true);
  return torque_forward(net, w, d, Tensor::of(sim::state_vector(s)), Tensor::of(a)).values();
}

}  // namespace modbot::gnn
