#include "modbot/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "modbot/diff/checkpoint.hpp"
#include "modbot/trainer/spline.hpp"
#include "modbot/util/rng.hpp"

namespace modbot::trainer {

using design::DesignGraph;
using design::ModuleKind;
using diff::Tensor;

namespace {

constexpr double kCmdLimit = design::geom::kJointVelLimit;
constexpr double kBootstrapSigma = 2.0;  // rad/s knot spread for random commands
constexpr double kMinLr = 1e-6;

std::vector<double> clamp_command(std::vector<double> v) {
  for (double& x : v) x = std::clamp(x, -kCmdLimit, kCmdLimit);
  return v;
}

// Applies `cmd`, records the executed transition, and advances the state.
// Returns true when the step failed the rollout.
bool record_step(ExperienceDataset& data, const DesignGraph& d, int design_index,
                 sim::TerrainKind env, int level, int trajectory, sim::RobotState& s,
                 const std::vector<double>& cmd, const sim::Heightfield& hf) {
  TransitionRecord r;
  r.design = design_index;
  r.env = env;
  r.level = level;
  r.trajectory = trajectory;
  r.state = sim::state_vector(s);
  r.action = s.pending_action.empty() ? std::vector<double>(static_cast<size_t>(d.joint_count()), 0.0)
                                      : s.pending_action;
  const auto win = sim::terrain_window(hf, s.x, s.z);
  r.window.assign(win.begin(), win.end());
  auto res = sim::step(s, cmd, hf, d);
  r.next_state = sim::state_vector(res.state);
  r.torque = std::move(res.torque);
  data.add(d, std::move(r));
  s = std::move(res.state);
  return s.failed;
}

}  // namespace

void collect_random(ExperienceDataset& data, const std::vector<DesignGraph>& designs,
                    int n_traj, int steps, uint64_t seed) {
  const sim::Heightfield flat = sim::make_terrain(sim::TerrainKind::kFlat, 0, 0);
  for (size_t di = 0; di < designs.size(); ++di) {
    const DesignGraph& d = designs[di];
    for (int k = 0; k < n_traj; ++k) {
      util::Rng rng(util::mix({seed, di, static_cast<uint64_t>(k)}));
      const auto commands = spline_commands(d.joint_count(), steps, kBootstrapSigma, rng);
      sim::RobotState s = sim::reset(d, flat, util::mix({seed, di, static_cast<uint64_t>(k), 1}));
      const int traj = data.begin_trajectory();
      for (int t = 0; t < steps; ++t)
        if (record_step(data, d, static_cast<int>(di), sim::TerrainKind::kFlat, 0, traj, s,
                        commands[static_cast<size_t>(t)], flat))
          break;
    }
  }
}

// --- supervised fits ---------------------------------------------------------

namespace {

struct KindStats {
  std::vector<double> mu, sigma;
};

struct DeltaStats {
  KindStats body, leg, wheel;
};

KindStats finalize(const std::vector<double>& sum, const std::vector<double>& sumsq, double n) {
  KindStats out;
  out.mu.assign(sum.size(), 0.0);
  out.sigma.assign(sum.size(), 1.0);
  if (n < 0.5) return out;
  for (size_t k = 0; k < sum.size(); ++k) {
    out.mu[k] = sum[k] / n;
    const double var = std::max(0.0, sumsq[k] / n - out.mu[k] * out.mu[k]);
    if (var > 1e-12) out.sigma[k] = std::sqrt(var);
  }
  return out;
}

DeltaStats delta_stats_from(const std::vector<DesignGraph>& designs,
                            const ExperienceDataset& data, const std::vector<size_t>& idx) {
  std::vector<double> sb(6, 0.0), qb(6, 0.0), sl(4, 0.0), ql(4, 0.0), sw(2, 0.0), qw(2, 0.0);
  double nb = 0.0, nl = 0.0, nw = 0.0;
  for (size_t i : idx) {
    const auto& r = data.records()[i];
    const DesignGraph& d = designs[static_cast<size_t>(r.design)];
    for (int k = 0; k < sim::kBodyStateDim; ++k) {
      const double dl = r.next_state[static_cast<size_t>(k)] - r.state[static_cast<size_t>(k)];
      sb[static_cast<size_t>(k)] += dl;
      qb[static_cast<size_t>(k)] += dl * dl;
    }
    nb += 1.0;
    for (int node = 1; node < d.node_count(); ++node) {
      const ModuleKind kind = d.nodes[static_cast<size_t>(node)].kind;
      const int j0 = d.joint_offset(node);
      auto& s = kind == ModuleKind::kLeg ? sl : sw;
      auto& q = kind == ModuleKind::kLeg ? ql : qw;
      for (int jl = 0; jl < design::joints_of(kind); ++jl) {
        for (int part = 0; part < 2; ++part) {
          const size_t dim = static_cast<size_t>(sim::kBodyStateDim + 2 * (j0 + jl) + part);
          const double dl = r.next_state[dim] - r.state[dim];
          s[static_cast<size_t>(2 * jl + part)] += dl;
          q[static_cast<size_t>(2 * jl + part)] += dl * dl;
        }
      }
      (kind == ModuleKind::kLeg ? nl : nw) += 1.0;
    }
  }
  return DeltaStats{finalize(sb, qb, nb), finalize(sl, ql, nl), finalize(sw, qw, nw)};
}

// 1 / delta sigma mapped onto the flat state dims of one design.
std::vector<double> dim_weights(const DesignGraph& d, const DeltaStats& st) {
  std::vector<double> w(static_cast<size_t>(sim::state_dim(d)), 1.0);
  for (int k = 0; k < sim::kBodyStateDim; ++k)
    w[static_cast<size_t>(k)] = 1.0 / st.body.sigma[static_cast<size_t>(k)];
  for (int node = 1; node < d.node_count(); ++node) {
    const ModuleKind kind = d.nodes[static_cast<size_t>(node)].kind;
    const KindStats& ks = kind == ModuleKind::kLeg ? st.leg : st.wheel;
    const int j0 = d.joint_offset(node);
    for (int jl = 0; jl < design::joints_of(kind); ++jl)
      for (int part = 0; part < 2; ++part)
        w[static_cast<size_t>(sim::kBodyStateDim + 2 * (j0 + jl) + part)] =
            1.0 / ks.sigma[static_cast<size_t>(2 * jl + part)];
  }
  return w;
}

double eval_model_mse(gnn::NodeNetworkSet& model, const std::vector<DesignGraph>& designs,
                      const ExperienceDataset& data, const std::vector<size_t>& idx,
                      const std::vector<std::vector<double>>& weights) {
  if (idx.empty()) return 0.0;
  diff::Tape tape;
  const diff::Binding w(tape, model.params(), true);
  double total = 0.0;
  for (size_t i : idx) {
    const auto& r = data.records()[i];
    const DesignGraph& d = designs[static_cast<size_t>(r.design)];
    const Tensor next = gnn::model_forward(model, w, d, Tensor::of(r.state),
                                           Tensor::of(r.action), r.window, false);
    const auto& pv = next.values();
    const auto& wt = weights[static_cast<size_t>(r.design)];
    double e = 0.0;
    for (size_t k = 0; k < pv.size(); ++k) {
      const double err = (pv[k] - r.next_state[k]) * wt[k];
      e += err * err;
    }
    total += e / static_cast<double>(pv.size());
  }
  return total / static_cast<double>(idx.size());
}

double epoch_lr(double base, int epoch, int epochs) {
  const int hold = std::max(1, epochs - 6);
  return epoch < hold ? base : base * std::pow(0.5, epoch - hold + 1);
}

void require_per_design_data(const std::vector<DesignGraph>& designs,
                             const ExperienceDataset& data, const std::vector<size_t>& idx) {
  std::vector<bool> seen(designs.size(), false);
  for (size_t i : idx) seen[static_cast<size_t>(data.records()[i].design)] = true;
  for (size_t di = 0; di < designs.size(); ++di)
    if (!seen[di]) throw TrainerError("no training data for design '" + designs[di].name + "'");
}

}  // namespace

ModelFitResult train_model(gnn::NodeNetworkSet& model, const std::vector<DesignGraph>& designs,
                           const ExperienceDataset& data, const Hyperparams& hp, uint64_t seed) {
  if (data.size() == 0) throw TrainerError("cannot fit a model on an empty dataset");
  const auto train_idx = data.train_indices();
  if (train_idx.empty()) throw TrainerError("no training records after the split");
  require_per_design_data(designs, data, train_idx);
  const auto val_idx = data.validation_indices();
  const auto& eval_idx = val_idx.empty() ? train_idx : val_idx;

  const DeltaStats st = delta_stats_from(designs, data, train_idx);
  model.set_delta_stats(ModuleKind::kBody, st.body.mu, st.body.sigma);
  model.set_delta_stats(ModuleKind::kLeg, st.leg.mu, st.leg.sigma);
  model.set_delta_stats(ModuleKind::kWheel, st.wheel.mu, st.wheel.sigma);
  std::vector<std::vector<double>> weights;
  weights.reserve(designs.size());
  for (const auto& d : designs) weights.push_back(dim_weights(d, st));

  ModelFitResult res;
  res.initial_mse = eval_model_mse(model, designs, data, eval_idx, weights);

  util::Rng rng(seed);
  for (int epoch = 0; epoch < hp.model_epochs; ++epoch) {
    const double lr = epoch_lr(hp.model_lr, epoch, hp.model_epochs);
    for (const auto& batch : make_stratified_batches(data, train_idx, hp.model_batch, rng)) {
      diff::Tape tape;
      const diff::Binding w(tape, model.params());
      Tensor loss = Tensor::scalar_of(0.0);
      for (size_t i : batch) {
        const auto& r = data.records()[i];
        const DesignGraph& d = designs[static_cast<size_t>(r.design)];
        const Tensor next = gnn::model_forward(model, w, d, Tensor::of(r.state),
                                               Tensor::of(r.action), r.window, true);
        const Tensor err = diff::mul(diff::sub(next, Tensor::of(r.next_state)),
                                     Tensor::of(weights[static_cast<size_t>(r.design)]));
        loss = diff::add(loss, diff::mean(diff::square(err)));
      }
      loss = diff::scale(loss, 1.0 / static_cast<double>(batch.size()));
      const auto grads = diff::backward(loss, w);
      diff::sgd_step(model.params(), grads, lr, 0.9);
    }
    res.epoch_mse.push_back(eval_model_mse(model, designs, data, eval_idx, weights));
  }
  res.final_mse = res.epoch_mse.back();
  res.diverged = !(res.final_mse <= 10.0 * res.initial_mse);
  return res;
}

namespace {

// Constant-mean baseline classes: leg joints by slot, wheels together.
int torque_class(ModuleKind kind, int joint_in_module) {
  return kind == ModuleKind::kLeg ? joint_in_module : 2;
}

double eval_torque_mse(gnn::NodeNetworkSet& net, const std::vector<DesignGraph>& designs,
                       const ExperienceDataset& data, const std::vector<size_t>& idx) {
  if (idx.empty()) return 0.0;
  diff::Tape tape;
  const diff::Binding w(tape, net.params(), true);
  double total = 0.0;
  for (size_t i : idx) {
    const auto& r = data.records()[i];
    const DesignGraph& d = designs[static_cast<size_t>(r.design)];
    const Tensor pred = gnn::torque_forward(net, w, d, Tensor::of(r.state), Tensor::of(r.action));
    const auto& pv = pred.values();
    double e = 0.0;
    for (size_t k = 0; k < pv.size(); ++k) {
      const double err = pv[k] - r.torque[k];
      e += err * err;
    }
    total += e / static_cast<double>(pv.size());
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

TorqueFitResult train_torque_estimator(gnn::NodeNetworkSet& torque,
                                       const std::vector<DesignGraph>& designs,
                                       const ExperienceDataset& data, const Hyperparams& hp,
                                       uint64_t seed) {
  if (data.size() == 0) throw TrainerError("cannot fit the torque estimator on an empty dataset");
  const auto train_idx = data.train_indices();
  if (train_idx.empty()) throw TrainerError("no training records after the split");
  const auto val_idx = data.validation_indices();
  const auto& eval_idx = val_idx.empty() ? train_idx : val_idx;

  double class_sum[3] = {0.0, 0.0, 0.0};
  double class_n[3] = {0.0, 0.0, 0.0};
  auto for_each_joint = [&](const TransitionRecord& r, auto&& fn) {
    const DesignGraph& d = designs[static_cast<size_t>(r.design)];
    for (int node = 1; node < d.node_count(); ++node) {
      const ModuleKind kind = d.nodes[static_cast<size_t>(node)].kind;
      const int j0 = d.joint_offset(node);
      for (int jl = 0; jl < design::joints_of(kind); ++jl)
        fn(torque_class(kind, jl), r.torque[static_cast<size_t>(j0 + jl)],
           static_cast<double>(d.joint_count()));
    }
  };
  for (size_t i : train_idx)
    for_each_joint(data.records()[i], [&](int c, double label, double) {
      class_sum[c] += label;
      class_n[c] += 1.0;
    });
  double class_mu[3] = {0.0, 0.0, 0.0};
  for (int c = 0; c < 3; ++c)
    if (class_n[c] > 0.5) class_mu[c] = class_sum[c] / class_n[c];

  TorqueFitResult res;
  double base_total = 0.0;
  for (size_t i : eval_idx) {
    double e = 0.0;
    for_each_joint(data.records()[i], [&](int c, double label, double nj) {
      const double err = label - class_mu[c];
      e += err * err / nj;
    });
    base_total += e;
  }
  res.baseline_mse = base_total / static_cast<double>(eval_idx.size());

  util::Rng rng(seed);
  for (int epoch = 0; epoch < hp.model_epochs; ++epoch) {
    const double lr = epoch_lr(hp.model_lr, epoch, hp.model_epochs);
    for (const auto& batch : make_stratified_batches(data, train_idx, hp.model_batch, rng)) {
      diff::Tape tape;
      const diff::Binding w(tape, torque.params());
      Tensor loss = Tensor::scalar_of(0.0);
      for (size_t i : batch) {
        const auto& r = data.records()[i];
        const DesignGraph& d = designs[static_cast<size_t>(r.design)];
        const Tensor pred =
            gnn::torque_forward(torque, w, d, Tensor::of(r.state), Tensor::of(r.action));
        loss = diff::add(loss, diff::mean(diff::square(diff::sub(pred, Tensor::of(r.torque)))));
      }
      loss = diff::scale(loss, 1.0 / static_cast<double>(batch.size()));
      const auto grads = diff::backward(loss, w);
      diff::sgd_step(torque.params(), grads, lr, 0.9);
    }
  }
  res.final_mse = eval_torque_mse(torque, designs, data, eval_idx);
  return res;
}

// --- policy phase -------------------------------------------------------------

CurriculumState make_curriculum(int design_count) {
  CurriculumState cs;
  cs.level.assign(static_cast<size_t>(design_count), 0);
  cs.mean_distance.assign(static_cast<size_t>(design_count), 0.0);
  return cs;
}

namespace {

struct Triple {
  int design, env, level;
};

std::vector<Triple> curriculum_triples(const std::vector<DesignGraph>& designs,
                                       const std::vector<EnvSpec>& envs,
                                       const CurriculumState& cs) {
  std::vector<Triple> out;
  for (size_t di = 0; di < designs.size(); ++di)
    for (size_t ei = 0; ei < envs.size(); ++ei) {
      const int top = std::min(cs.level[di], envs[ei].max_level);
      for (int lv = 0; lv <= top; ++lv)
        out.push_back({static_cast<int>(di), static_cast<int>(ei), lv});
    }
  return out;
}

std::vector<std::vector<double>> zero_hidden_values(const DesignGraph& d,
                                                    const gnn::NetConfig& cfg) {
  return std::vector<std::vector<double>>(static_cast<size_t>(d.node_count()),
                                          std::vector<double>(static_cast<size_t>(cfg.hidden), 0.0));
}

}  // namespace

ImaginationBuffer init_buffer(const std::vector<DesignGraph>& designs,
                              const std::vector<EnvSpec>& envs, const CurriculumState& cs,
                              const gnn::NetConfig& cfg, int n_batch, uint64_t seed) {
  if (n_batch < 2 || n_batch % 2 != 0) throw TrainerError("buffer size must be even and >= 2");
  const auto triples = curriculum_triples(designs, envs, cs);
  if (triples.empty()) throw TrainerError("no (design, env, level) combinations to sample");
  ImaginationBuffer buf;
  buf.reserve(static_cast<size_t>(n_batch));
  for (int i = 0; i < n_batch; ++i) {
    const Triple& t = triples[static_cast<size_t>(i) % triples.size()];
    BufferEntry e;
    e.design = t.design;
    e.env = envs[static_cast<size_t>(t.env)].kind;
    e.level = t.level;
    e.terrain = sim::make_terrain(e.env, t.level, util::mix({seed, 31, static_cast<uint64_t>(i)}));
    e.state = sim::reset(designs[static_cast<size_t>(t.design)], e.terrain,
                         util::mix({seed, 32, static_cast<uint64_t>(i)}));
    e.hidden = zero_hidden_values(designs[static_cast<size_t>(t.design)], cfg);
    buf.push_back(std::move(e));
  }
  return buf;
}

Tensor imagined_loss(gnn::NodeNetworkSet& policy, gnn::NodeNetworkSet& model,
                     const diff::Binding& wp, const diff::Binding& wm,
                     const std::vector<DesignGraph>& designs,
                     const std::vector<BufferEntry>& entries, int horizon, double entropy_beta,
                     const ImaginedRewardWeights& rw, bool sample, bool train_mode,
                     uint64_t noise_seed, RolloutMidpoints* midpoints) {
  if (entries.empty()) throw TrainerError("imagined rollout needs at least one entry");
  if (midpoints) {
    midpoints->state.assign(entries.size(), sim::RobotState{});
    midpoints->hidden.assign(entries.size(), {});
  }
  Tensor reward_acc = Tensor::scalar_of(0.0);
  Tensor logvar_acc = Tensor::scalar_of(0.0);
  double joint_steps = 0.0;
  for (size_t i = 0; i < entries.size(); ++i) {
    const BufferEntry& e = entries[i];
    const DesignGraph& d = designs[static_cast<size_t>(e.design)];
    const int nj = d.joint_count();
    const Tensor q_nom = Tensor::of(design::nominal_stance(d));
    const Tensor q_mask = Tensor::of(design::stance_weight(d));

    Tensor s = Tensor::of(sim::state_vector(e.state));
    gnn::HiddenStateMap h;
    h.h.reserve(e.hidden.size());
    for (const auto& hv : e.hidden) h.h.push_back(Tensor::of(hv));

    for (int t = 0; t < horizon; ++t) {
      const auto win = sim::terrain_window(e.terrain, s.at(0), s.at(1));
      const std::vector<double> window(win.begin(), win.end());
      const auto inputs = gnn::policy_node_inputs(d, s);
      const auto pt = gnn::policy_forward(policy, wp, d, inputs, window, h, train_mode);
      Tensor a;
      if (sample) {
        util::Rng g(util::mix({noise_seed, i, static_cast<uint64_t>(t)}));
        std::vector<double> eps(static_cast<size_t>(nj));
        for (double& x : eps) x = g.gaussian();
        a = diff::clamp(diff::gaussian_sample(pt.mean, pt.logvar, Tensor::of(eps)), -kCmdLimit,
                        kCmdLimit);
      } else {
        a = diff::clamp(pt.mean, -kCmdLimit, kCmdLimit);
      }
      const Tensor s_next = gnn::model_forward(model, wm, d, s, a, window, false);

      std::vector<Tensor> next_q, next_qd;
      next_q.reserve(static_cast<size_t>(nj));
      next_qd.reserve(static_cast<size_t>(nj));
      for (int j = 0; j < nj; ++j) {
        next_q.push_back(diff::slice(s_next, sim::kBodyStateDim + 2 * j, 1));
        next_qd.push_back(diff::slice(s_next, sim::kBodyStateDim + 2 * j + 1, 1));
      }
      const Tensor progress = diff::sum(diff::sub(diff::slice(s_next, 0, 1), diff::slice(s, 0, 1)));
      const Tensor pitch2 = diff::sum(diff::square(diff::slice(s_next, 2, 1)));
      const Tensor effort = diff::sum(diff::square(diff::sub(a, diff::concat_all(next_qd))));
      const Tensor stance =
          diff::sum(diff::mul(diff::square(diff::sub(diff::concat_all(next_q), q_nom)), q_mask));
      const Tensor r = diff::add(
          diff::add(diff::scale(progress, rw.progress), diff::scale(pitch2, -rw.pitch)),
          diff::add(diff::scale(effort, -rw.effort), diff::scale(stance, -rw.stance)));
      reward_acc = diff::add(reward_acc, r);
      if (entropy_beta != 0.0) logvar_acc = diff::add(logvar_acc, diff::sum(pt.logvar));
      joint_steps += nj;

      s = s_next;
      if (midpoints && t + 1 == horizon / 2) {
        midpoints->state[i] = sim::state_from_vector(d, s.values());
        auto& mh = midpoints->hidden[i];
        mh.reserve(h.h.size());
        for (const auto& ht : h.h) mh.push_back(ht.values());
      }
    }
  }
  Tensor loss = diff::scale(reward_acc, -1.0 / static_cast<double>(entries.size()));
  if (entropy_beta != 0.0) {
    const Tensor mean_logvar = diff::scale(logvar_acc, 1.0 / joint_steps);
    const Tensor entropy = diff::add_scalar(diff::scale(mean_logvar, 0.5),
                                            0.5 * (std::log(2.0 * std::numbers::pi) + 1.0));
    loss = diff::add(loss, diff::scale(entropy, -entropy_beta));
  }
  return loss;
}

LrGate::LrGate(diff::ParamStore& params, double lr, double initial_reward)
    : params_(&params), lr_(lr), initial_(initial_reward) {
  params_->snapshot();
}

bool LrGate::check(double reward) {
  if (!(reward >= initial_)) {
    revert();
    return true;
  }
  params_->pop_snapshot();
  params_->snapshot();
  return false;
}

void LrGate::revert() {
  params_->restore_top();
  lr_ *= 0.5;
  ++reversions_;
}

void LrGate::finish() {
  if (!finished_) {
    params_->pop_snapshot();
    finished_ = true;
  }
}

PolicyOptResult optimize_policy(gnn::NodeNetworkSet& policy, gnn::NodeNetworkSet& model,
                                const std::vector<DesignGraph>& designs,
                                ImaginationBuffer& buffer, const Hyperparams& hp, uint64_t seed,
                                const ImaginedRewardWeights& rw) {
  if (buffer.size() < 2 || buffer.size() % 2 != 0)
    throw TrainerError("imagination buffer must be even and >= 2");
  if (hp.horizon < 2 || hp.horizon % 2 != 0) throw TrainerError("horizon must be even and >= 2");

  std::vector<BufferEntry> held_out;
  held_out.reserve(10 * buffer.size());
  for (size_t j = 0; j < 10 * buffer.size(); ++j) {
    const BufferEntry& src = buffer[j % buffer.size()];
    BufferEntry v;
    v.design = src.design;
    v.env = src.env;
    v.level = src.level;
    v.terrain = sim::make_terrain(src.env, src.level, util::mix({seed, 41, j}));
    v.state = sim::reset(designs[static_cast<size_t>(src.design)], v.terrain,
                         util::mix({seed, 42, j}));
    v.hidden = zero_hidden_values(designs[static_cast<size_t>(src.design)], policy.config());
    held_out.push_back(std::move(v));
  }
  auto validation = [&]() {
    diff::Tape tape;
    const diff::Binding wp(tape, policy.params(), true);
    const diff::Binding wm(tape, model.params(), true);
    return -imagined_loss(policy, model, wp, wm, designs, held_out, hp.horizon, 0.0, rw, false,
                          false, 0, nullptr)
                .scalar();
  };

  PolicyOptResult res;
  const double initial = validation();
  res.validation_rewards.push_back(initial);
  LrGate gate(policy.params(), hp.policy_lr, initial);
  const int interval = std::max(1, hp.policy_steps / 10);
  const size_t half = buffer.size() / 2;

  for (int k = 1; k <= hp.policy_steps; ++k) {
    {
      diff::Tape tape;
      const diff::Binding wp(tape, policy.params());
      const diff::Binding wm(tape, model.params(), true);
      RolloutMidpoints mids;
      const Tensor loss =
          imagined_loss(policy, model, wp, wm, designs, buffer, hp.horizon, hp.entropy_beta, rw,
                        true, true, util::mix({seed, 7, static_cast<uint64_t>(k)}), &mids);
      if (!std::isfinite(loss.scalar())) {
        gate.revert();
        if (gate.lr() < kMinLr) {
          res.aborted = true;
          break;
        }
        continue;
      }
      const auto grads = diff::backward(loss, wp);
      diff::sgd_step(policy.params(), grads, gate.lr(), 0.9);
      for (size_t i = 0; i < half; ++i) {
        BufferEntry& dst = buffer[half + i];
        const BufferEntry& src = buffer[i];
        dst.design = src.design;
        dst.env = src.env;
        dst.level = src.level;
        dst.terrain = src.terrain;
        dst.state = std::move(mids.state[i]);
        dst.hidden = std::move(mids.hidden[i]);
      }
    }
    if (k % interval == 0 || k == hp.policy_steps) {
      const double v = validation();
      res.validation_rewards.push_back(v);
      if (gate.check(v) && gate.lr() < kMinLr) {
        res.aborted = true;
        break;
      }
    }
  }
  gate.finish();
  res.final_lr = gate.lr();
  res.reversions = gate.reversions();
  return res;
}

// --- curriculum and collection --------------------------------------------------

std::vector<std::vector<double>> measure_distances(gnn::NodeNetworkSet& policy,
                                                   const std::vector<DesignGraph>& designs,
                                                   const std::vector<EnvSpec>& envs,
                                                   const CurriculumState& cs, int episodes,
                                                   int steps, uint64_t seed) {
  std::vector<std::vector<double>> out(designs.size(), std::vector<double>(envs.size(), 0.0));
  for (size_t di = 0; di < designs.size(); ++di) {
    const DesignGraph& d = designs[di];
    for (size_t ei = 0; ei < envs.size(); ++ei) {
      const int lvl = std::min(cs.level[di], envs[ei].max_level);
      double total = 0.0;
      for (int ep = 0; ep < episodes; ++ep) {
        const auto hf = sim::make_terrain(envs[ei].kind, lvl,
                                          util::mix({seed, 51, di, ei, static_cast<uint64_t>(ep)}));
        sim::RobotState s =
            sim::reset(d, hf, util::mix({seed, 52, di, ei, static_cast<uint64_t>(ep)}));
        util::Rng obs_rng(util::mix({seed, 53, di, ei, static_cast<uint64_t>(ep)}));
        auto h = gnn::zero_hidden(d, policy.config());
        const double x0 = s.x;
        for (int t = 0; t < steps && !s.failed; ++t) {
          const auto obs = sim::observe(s, hf, d, obs_rng);
          const auto po = gnn::policy_step(policy, d, obs, h);
          s = sim::step(s, clamp_command(po.mean), hf, d).state;
        }
        total += s.x - x0;
      }
      out[di][ei] = total / episodes;
    }
  }
  return out;
}

CurriculumState curriculum_update(CurriculumState cs, const std::vector<double>& distances,
                                  const Hyperparams& hp) {
  if (distances.size() != cs.level.size())
    throw TrainerError("curriculum needs one distance per design");
  cs.mean_distance = distances;
  auto bump = [&](size_t i) { cs.level[i] = std::min(cs.level[i] + 1, hp.max_level); };
  if (hp.per_design_curriculum) {
    for (size_t i = 0; i < distances.size(); ++i)
      if (distances[i] >= hp.curriculum_threshold) bump(i);
  } else {
    bool all = true;
    for (double v : distances) all = all && v >= hp.curriculum_threshold;
    if (all)
      for (size_t i = 0; i < cs.level.size(); ++i) bump(i);
  }
  return cs;
}

namespace {

sim::Observation noiseless_observation(const sim::RobotState& s, const sim::Heightfield& hf,
                                       const DesignGraph& d) {
  (void)d;
  sim::Observation o;
  o.pitch = s.pitch;
  o.pitch_rate = s.pitch_rate;
  o.q = s.q;
  o.qd = s.qd;
  o.window = sim::terrain_window(hf, s.x, s.z);
  return o;
}

}  // namespace

size_t collect_onpolicy(ExperienceDataset& data, gnn::NodeNetworkSet& policy,
                        gnn::NodeNetworkSet& model, const std::vector<DesignGraph>& designs,
                        const std::vector<EnvSpec>& envs, const CurriculumState& cs,
                        const Hyperparams& hp, uint64_t seed) {
  size_t appended = 0;
  for (size_t di = 0; di < designs.size(); ++di) {
    const DesignGraph& d = designs[di];
    const int nj = d.joint_count();
    for (size_t ei = 0; ei < envs.size(); ++ei) {
      const sim::TerrainKind kind = envs[ei].kind;
      const int top = std::min(cs.level[di], envs[ei].max_level);
      for (int lvl = 0; lvl <= top; ++lvl) {
        const uint64_t lv = static_cast<uint64_t>(lvl);
        {  // closed-loop rollout on the distribution means
          const auto hf = sim::make_terrain(kind, lvl, util::mix({seed, 61, di, ei, lv}));
          sim::RobotState s = sim::reset(d, hf, util::mix({seed, 62, di, ei, lv}));
          util::Rng obs_rng(util::mix({seed, 63, di, ei, lv}));
          auto h = gnn::zero_hidden(d, policy.config());
          const int traj = data.begin_trajectory();
          for (int t = 0; t < hp.horizon; ++t) {
            const auto obs = sim::observe(s, hf, d, obs_rng);
            const auto po = gnn::policy_step(policy, d, obs, h);
            const bool failed = record_step(data, d, static_cast<int>(di), kind, lvl, traj, s,
                                            clamp_command(po.mean), hf);
            ++appended;
            if (failed) break;
          }
        }
        {  // imagined mean commands perturbed with spline noise, replayed open-loop
          const auto hf = sim::make_terrain(kind, lvl, util::mix({seed, 71, di, ei, lv}));
          const sim::RobotState s0 = sim::reset(d, hf, util::mix({seed, 72, di, ei, lv}));
          std::vector<std::vector<double>> u;
          u.reserve(static_cast<size_t>(hp.horizon));
          {
            sim::RobotState ms = s0;
            auto h = gnn::zero_hidden(d, policy.config());
            for (int t = 0; t < hp.horizon; ++t) {
              const auto obs = noiseless_observation(ms, hf, d);
              const auto po = gnn::policy_step(policy, d, obs, h);
              u.push_back(clamp_command(po.mean));
              const std::vector<double> window(obs.window.begin(), obs.window.end());
              ms = gnn::model_step(model, d, ms, u.back(), window);
            }
          }
          util::Rng noise_rng(util::mix({seed, 73, di, ei, lv}));
          const auto noise = spline_commands(nj, hp.horizon, hp.onpolicy_noise * kBootstrapSigma,
                                             noise_rng);
          sim::RobotState s = s0;
          const int traj = data.begin_trajectory();
          for (int t = 0; t < hp.horizon; ++t) {
            std::vector<double> cmd = u[static_cast<size_t>(t)];
            for (int j = 0; j < nj; ++j) cmd[static_cast<size_t>(j)] +=
                noise[static_cast<size_t>(t)][static_cast<size_t>(j)];
            const bool failed = record_step(data, d, static_cast<int>(di), kind, lvl, traj, s,
                                            clamp_command(std::move(cmd)), hf);
            ++appended;
            if (failed) break;
          }
        }
      }
    }
  }
  return appended;
}

// --- checkpoints and the outer loop ----------------------------------------------

namespace {

Tensor config_tensor(const gnn::NetConfig& c) {
  return Tensor::of({static_cast<double>(c.hidden), static_cast<double>(c.enc_hidden),
                     static_cast<double>(c.rounds)});
}

gnn::NetConfig config_from_tensor(const Tensor& t, const std::string& what) {
  if (t.size() != 3) throw TrainerError("checkpoint meta record '" + what + "' is malformed");
  gnn::NetConfig c;
  c.hidden = static_cast<int>(t.at(0));
  c.enc_hidden = static_cast<int>(t.at(1));
  c.rounds = static_cast<int>(t.at(2));
  if (c.hidden < 1 || c.enc_hidden < 1 || c.rounds < 1)
    throw TrainerError("checkpoint meta record '" + what + "' has invalid sizes");
  return c;
}

void load_prefixed(diff::ParamStore& store, const diff::NamedTensors& tensors,
                   const std::string& prefix) {
  const size_t loaded = store.load_tensors(tensors, prefix);
  if (loaded == store.size()) return;
  std::string missing;
  for (const auto& name : store.names()) {
    const std::string want = prefix + name;
    const bool found = std::any_of(tensors.begin(), tensors.end(),
                                   [&](const auto& nt) { return nt.first == want; });
    if (!found) missing += (missing.empty() ? "" : ", ") + want;
  }
  throw TrainerError("checkpoint is missing entries: " + missing);
}

}  // namespace

void save_networks(const std::string& path, const gnn::NodeNetworkSet& policy,
                   const gnn::NodeNetworkSet& model) {
  diff::NamedTensors all;
  all.emplace_back("meta/policy_config", config_tensor(policy.config()));
  all.emplace_back("meta/model_config", config_tensor(model.config()));
  for (auto& nt : policy.params().export_tensors("policy/")) all.push_back(std::move(nt));
  for (auto& nt : model.params().export_tensors("model/")) all.push_back(std::move(nt));
  diff::write_tensors(path, all);
}

LoadedNetworks load_networks(const std::string& path) {
  const auto tensors = diff::read_tensors(path);
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw TrainerError("checkpoint has no '" + name + "' record");
  };
  const auto pcfg = config_from_tensor(find("meta/policy_config"), "meta/policy_config");
  const auto mcfg = config_from_tensor(find("meta/model_config"), "meta/model_config");
  LoadedNetworks out{gnn::NodeNetworkSet(gnn::Role::kPolicy, pcfg, 0),
                     gnn::NodeNetworkSet(gnn::Role::kModel, mcfg, 0)};
  load_prefixed(out.policy.params(), tensors, "policy/");
  load_prefixed(out.model.params(), tensors, "model/");
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

RunArtifacts run(const RunConfig& cfg, const std::string& out_dir,
                 const std::function<void(const std::string&)>& echo) {
  validate(cfg.hp);
  if (cfg.designs.empty() || cfg.envs.empty())
    throw TrainerError("run needs at least one design and one environment");
  std::filesystem::create_directories(out_dir);

  RunArtifacts art;
  art.log_path = out_dir + "/run.log";
  art.curves_path = out_dir + "/curves.csv";
  std::ofstream log(art.log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw TrainerError("cannot write " + art.log_path);
  auto emit = [&](const std::string& line) {
    log << line << '\n';
    log.flush();
    if (echo) echo(line);
  };

  const uint64_t seed = cfg.seed;
  gnn::NodeNetworkSet policy(gnn::Role::kPolicy, cfg.net, util::mix({seed, 1}));
  gnn::NodeNetworkSet model(gnn::Role::kModel, cfg.net, util::mix({seed, 2}));

  ExperienceDataset data;
  collect_random(data, cfg.designs, cfg.hp.random_trajectories, cfg.hp.random_steps,
                 util::mix({seed, 3}));
  emit("phase=bootstrap records=" + std::to_string(data.size()) +
       " trajectories=" + std::to_string(data.trajectory_count()));

  CurriculumState cs = make_curriculum(static_cast<int>(cfg.designs.size()));
  std::ofstream curves(art.curves_path, std::ios::binary | std::ios::trunc);
  if (!curves) throw TrainerError("cannot write " + art.curves_path);
  curves << "iteration,design,env,level,distance,model_mse,validation_reward\n";

  for (int i = 1; i <= cfg.hp.iterations; ++i) {
    const uint64_t it = static_cast<uint64_t>(i);
    const auto mfit = train_model(model, cfg.designs, data, cfg.hp, util::mix({seed, 4, it}));
    emit("phase=model iteration=" + std::to_string(i) + " initial_mse=" + fmt(mfit.initial_mse) +
         " final_mse=" + fmt(mfit.final_mse) + " diverged=" + (mfit.diverged ? "1" : "0"));

    auto buffer = init_buffer(cfg.designs, cfg.envs, cs, cfg.net, cfg.hp.batch,
                              util::mix({seed, 5, it}));
    const auto popt =
        optimize_policy(policy, model, cfg.designs, buffer, cfg.hp, util::mix({seed, 6, it}));
    emit("phase=policy iteration=" + std::to_string(i) +
         " reward_initial=" + fmt(popt.validation_rewards.front()) +
         " reward_final=" + fmt(popt.validation_rewards.back()) + " lr=" + fmt(popt.final_lr) +
         " reversions=" + std::to_string(popt.reversions) +
         " aborted=" + (popt.aborted ? "1" : "0"));

    const auto dists = measure_distances(policy, cfg.designs, cfg.envs, cs,
                                         cfg.hp.curriculum_episodes, 200, util::mix({seed, 7, it}));
    std::vector<double> per_design(cfg.designs.size(), 0.0);
    for (size_t di = 0; di < cfg.designs.size(); ++di) {
      for (size_t ei = 0; ei < cfg.envs.size(); ++ei) {
        per_design[di] += dists[di][ei];
        curves << i << ',' << cfg.designs[di].name << ',' << sim::terrain_name(cfg.envs[ei].kind)
               << ',' << std::min(cs.level[di], cfg.envs[ei].max_level) << ','
               << fmt(dists[di][ei]) << ',' << fmt(mfit.final_mse) << ','
               << fmt(popt.validation_rewards.back()) << '\n';
      }
      per_design[di] /= static_cast<double>(cfg.envs.size());
    }
    curves.flush();

    cs = curriculum_update(std::move(cs), per_design, cfg.hp);
    std::string levels;
    for (int lv : cs.level) levels += (levels.empty() ? "" : "/") + std::to_string(lv);
    emit("phase=curriculum iteration=" + std::to_string(i) +
         " min_distance=" + fmt(*std::min_element(per_design.begin(), per_design.end())) +
         " levels=" + levels);

    const size_t added = collect_onpolicy(data, policy, model, cfg.designs, cfg.envs, cs, cfg.hp,
                                          util::mix({seed, 8, it}));
    emit("phase=collect iteration=" + std::to_string(i) + " added=" + std::to_string(added) +
         " total=" + std::to_string(data.size()));

    const std::string ck = out_dir + "/checkpoint_" + std::to_string(i) + ".bin";
    save_networks(ck, policy, model);
    art.checkpoints.push_back(ck);
    emit("phase=checkpoint iteration=" + std::to_string(i) + " path=" + ck +
         " id=" + std::to_string(diff::checkpoint_checksum(ck)));
  }
  art.final_checksum = diff::checkpoint_checksum(art.checkpoints.back());
  return art;
}

}  // namespace modbot::trainer
