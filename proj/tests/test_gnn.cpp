#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "modbot/design/design.hpp"
#include "modbot/diff/checkpoint.hpp"
#include "modbot/diff/grad_check.hpp"
#include "modbot/diff/ops.hpp"
#include "modbot/gnn/network.hpp"
#include "modbot/sim/robot.hpp"
#include "modbot/sim/terrain.hpp"
#include "modbot/util/hash.hpp"
#include "modbot/util/rng.hpp"
#include "support/linear_fixture.hpp"

using namespace modbot;
using namespace modbot::gnn;
using design::DesignGraph;
using design::ModuleKind;
using diff::Tensor;

namespace {

// Freshly constructed decoder heads are zero, which makes every output zero;
// tests that need outputs to respond to inputs fill them in.
void randomize_decoders(NodeNetworkSet& net, uint64_t seed) {
  auto& p = net.params();
  for (const auto& name : p.names()) {
    if (name.find("/dec/") == std::string::npos) continue;
    util::Rng rng(util::mix({seed, util::fnv1a64(name)}));
    const auto& t = p.value(name);
    std::vector<double> v(t.values().size());
    for (auto& x : v) x = 0.4 * rng.gaussian();
    p.value(name) = Tensor::of(t.shape(), std::move(v));
  }
}

sim::Observation make_obs(const DesignGraph& d, uint64_t seed) {
  util::Rng rng(seed);
  sim::Observation o;
  o.pitch = rng.uniform(-0.3, 0.3);
  o.pitch_rate = rng.uniform(-1.0, 1.0);
  o.q.resize(static_cast<size_t>(d.joint_count()));
  o.qd.resize(static_cast<size_t>(d.joint_count()));
  for (auto& v : o.q) v = rng.uniform(-1.0, 1.0);
  for (auto& v : o.qd) v = rng.uniform(-3.0, 3.0);
  for (auto& w : o.window) w = rng.uniform(-0.3, 0.1);
  return o;
}

std::vector<double> random_state_vector(const DesignGraph& d, uint64_t seed) {
  util::Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(sim::state_dim(d)));
  for (auto& x : v) x = 0.4 * rng.gaussian();
  return v;
}

std::vector<double> random_action(const DesignGraph& d, uint64_t seed) {
  util::Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(d.joint_count()));
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

// Same limbs as d, listed in reverse, bypassing the canonical sort so node
// ids and joint offsets differ.
DesignGraph reversed_design(const DesignGraph& d) {
  DesignGraph r;
  r.name = d.name + "-reversed";
  r.body_length = d.body_length;
  r.nodes.push_back(d.nodes[0]);
  for (int i = d.node_count() - 1; i >= 1; --i)
    r.nodes.push_back(d.nodes[static_cast<size_t>(i)]);
  return r;
}

// joint_map[j] = index in the reversed design's joint vector of joint j.
std::vector<int> joint_map(const DesignGraph& a, const DesignGraph& b) {
  std::vector<int> map(static_cast<size_t>(a.joint_count()));
  for (int i = 1; i < a.node_count(); ++i) {
    const int bi = a.node_count() - i;
    for (int j = 0; j < design::joints_of(a.nodes[static_cast<size_t>(i)].kind); ++j)
      map[static_cast<size_t>(a.joint_offset(i) + j)] = b.joint_offset(bi) + j;
  }
  return map;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("one parameter set serves every design unchanged") {
  NodeNetworkSet pol(Role::kPolicy, {}, 1);
  NodeNetworkSet mod(Role::kModel, {}, 2);
  NodeNetworkSet tor(Role::kTorque, {}, 3);
  CHECK(pol.params().size() == 60);
  CHECK(mod.params().size() == 70);
  CHECK(tor.params().size() == 53);
  const uint64_t pol_sum = pol.params().checksum();
  const uint64_t mod_sum = mod.params().checksum();
  const uint64_t tor_sum = tor.params().checksum();

  std::vector<DesignGraph> designs = design::builtin_train_designs();
  for (const auto& d : design::builtin_test_designs()) designs.push_back(d);
  for (const auto& d : designs) {
    INFO(d.name);
    auto h = zero_hidden(d, pol.config());
    const auto out = policy_step(pol, d, make_obs(d, 10), h);
    CHECK(out.mean.size() == static_cast<size_t>(d.joint_count()));
    CHECK(out.logvar.size() == static_cast<size_t>(d.joint_count()));

    const auto s = sim::state_from_vector(d, random_state_vector(d, 11));
    const auto a = random_action(d, 12);
    const std::vector<double> window(sim::kWindowSize, 0.0);
    const auto next = model_step(mod, d, s, a, window);
    CHECK(sim::state_vector(next).size() == static_cast<size_t>(sim::state_dim(d)));
    CHECK(torque_step(tor, d, s, a).size() == static_cast<size_t>(d.joint_count()));
  }
  CHECK(pol.params().size() == 60);
  CHECK(mod.params().size() == 70);
  CHECK(tor.params().size() == 53);
  CHECK(pol.params().checksum() == pol_sum);
  CHECK(mod.params().checksum() == mod_sum);
  CHECK(tor.params().checksum() == tor_sum);
}

TEST_CASE("zero-initialized heads give zero commands, identity model, zero torque") {
  NodeNetworkSet pol(Role::kPolicy, {}, 4);
  NodeNetworkSet mod(Role::kModel, {}, 5);
  NodeNetworkSet tor(Role::kTorque, {}, 6);
  std::vector<DesignGraph> designs = design::builtin_train_designs();
  for (const auto& d : design::builtin_test_designs()) designs.push_back(d);
  for (const auto& d : designs) {
    INFO(d.name);
    auto h = zero_hidden(d, pol.config());
    const auto out = policy_step(pol, d, make_obs(d, 20), h);
    for (double v : out.mean) CHECK(v == 0.0);
    for (double v : out.logvar) CHECK(v == 0.0);

    const auto sv = random_state_vector(d, 21);
    const auto s = sim::state_from_vector(d, sv);
    const auto a = random_action(d, 22);
    const std::vector<double> window(sim::kWindowSize, 0.0);
    CHECK(sim::state_vector(model_step(mod, d, s, a, window)) == sv);
    for (double v : torque_step(tor, d, s, a)) CHECK(v == 0.0);
  }
}

TEST_CASE("policy decoder splits into mean and clamped log-variance") {
  NodeNetworkSet net(Role::kPolicy, {}, 7);
  net.params().value("leg/dec/b2") = Tensor::of({0.3, -0.7, 5.0, -12.0});
  net.params().value("wheel/dec/b2") = Tensor::of({0.25, 9.0});
  const auto& d = design::builtin_train_designs()[0];  // leg, leg, wheel
  auto h = zero_hidden(d, net.config());
  const auto out = policy_step(net, d, make_obs(d, 30), h);
  CHECK(out.mean == std::vector<double>{0.3, -0.7, 0.3, -0.7, 0.25});
  CHECK(out.logvar == std::vector<double>{2.0, -8.0, 2.0, -8.0, 2.0});
}

TEST_CASE("model deltas land on their state dimensions after denormalization") {
  NodeNetworkSet net(Role::kModel, {}, 8);
  net.set_delta_stats(ModuleKind::kBody, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {2, 2, 2, 2, 2, 2});
  net.set_delta_stats(ModuleKind::kLeg, {0.01, 0.02, 0.03, 0.04}, {3, 3, 3, 3});
  net.set_delta_stats(ModuleKind::kWheel, {0.05, 0.06}, {4, 4});
  net.params().value("body/dec/b2") = Tensor::of({0.01, 0.02, 0.03, 0.04, 0.05, 0.06});
  net.params().value("leg/dec/b2") = Tensor::of({0.1, 0.2, 0.3, 0.4});
  net.params().value("wheel/dec/b2") = Tensor::of({0.7, 0.8});

  const auto& d = design::builtin_train_designs()[1];  // leg, wheel, leg
  const auto sv = random_state_vector(d, 40);
  const auto next = sim::state_vector(
      model_step(net, d, sim::state_from_vector(d, sv), random_action(d, 41),
                 std::vector<double>(sim::kWindowSize, 0.0)));
  std::vector<double> expected;
  for (int k = 0; k < 6; ++k) expected.push_back(0.01 * (k + 1) * 2 + 0.1 * (k + 1));
  for (double v : {0.1, 0.2, 0.3, 0.4}) expected.push_back(v * 3);
  expected[6] += 0.01;
  expected[7] += 0.02;
  expected[8] += 0.03;
  expected[9] += 0.04;
  expected.push_back(0.7 * 4 + 0.05);
  expected.push_back(0.8 * 4 + 0.06);
  for (double v : {0.1 * 3 + 0.01, 0.2 * 3 + 0.02, 0.3 * 3 + 0.03, 0.4 * 3 + 0.04})
    expected.push_back(v);
  REQUIRE(next.size() == expected.size() + 0);
  for (size_t k = 0; k < next.size(); ++k)
    CHECK(next[k] - sv[k] == doctest::Approx(expected[k]).epsilon(1e-12));
}

TEST_CASE("leg nodes with identical inputs produce identical commands") {
  DesignGraph d;
  d.name = "twins";
  d.nodes = {{ModuleKind::kBody, 0.0}, {ModuleKind::kLeg, 0.3}, {ModuleKind::kLeg, 0.3}};
  NodeNetworkSet net(Role::kPolicy, {}, 9);
  randomize_decoders(net, 90);
  sim::Observation o = make_obs(d, 50);
  o.q[2] = o.q[0];
  o.q[3] = o.q[1];
  o.qd[2] = o.qd[0];
  o.qd[3] = o.qd[1];
  auto h = zero_hidden(d, net.config());
  const auto out = policy_step(net, d, o, h);
  CHECK(out.mean[0] == out.mean[2]);
  CHECK(out.mean[1] == out.mean[3]);
  CHECK(out.logvar[0] == out.logvar[2]);
  CHECK(out.logvar[1] == out.logvar[3]);
}

TEST_CASE("limb relabeling permutes outputs for all three roles") {
  const auto a = design::builtin_train_designs()[0];
  const auto b = reversed_design(a);
  const auto jm = joint_map(a, b);

  NodeNetworkSet pol(Role::kPolicy, {}, 13);
  randomize_decoders(pol, 130);
  auto ha = zero_hidden(a, pol.config());
  auto hb = zero_hidden(b, pol.config());
  for (uint64_t t = 0; t < 2; ++t) {
    const auto oa = make_obs(a, 100 + t);
    sim::Observation ob = oa;
    for (int j = 0; j < a.joint_count(); ++j) {
      ob.q[static_cast<size_t>(jm[static_cast<size_t>(j)])] = oa.q[static_cast<size_t>(j)];
      ob.qd[static_cast<size_t>(jm[static_cast<size_t>(j)])] = oa.qd[static_cast<size_t>(j)];
    }
    const auto outa = policy_step(pol, a, oa, ha);
    const auto outb = policy_step(pol, b, ob, hb);
    for (int j = 0; j < a.joint_count(); ++j) {
      const auto ja = static_cast<size_t>(j);
      const auto jb = static_cast<size_t>(jm[ja]);
      CHECK(outb.mean[jb] == outa.mean[ja]);
      CHECK(outb.logvar[jb] == outa.logvar[ja]);
    }
  }

  NodeNetworkSet mod(Role::kModel, {}, 14);
  randomize_decoders(mod, 140);
  const auto sva = random_state_vector(a, 110);
  const auto acta = random_action(a, 111);
  std::vector<double> svb = sva;
  std::vector<double> actb = acta;
  for (int j = 0; j < a.joint_count(); ++j) {
    const auto ja = static_cast<size_t>(j);
    const auto jb = static_cast<size_t>(jm[ja]);
    for (int k = 0; k < 2; ++k)
      svb[static_cast<size_t>(sim::kBodyStateDim) + 2 * jb + static_cast<size_t>(k)] =
          sva[static_cast<size_t>(sim::kBodyStateDim) + 2 * ja + static_cast<size_t>(k)];
    actb[jb] = acta[ja];
  }
  const std::vector<double> window(sim::kWindowSize, 0.1);
  const auto nexta =
      sim::state_vector(model_step(mod, a, sim::state_from_vector(a, sva), acta, window));
  const auto nextb =
      sim::state_vector(model_step(mod, b, sim::state_from_vector(b, svb), actb, window));
  for (int k = 0; k < sim::kBodyStateDim; ++k)
    CHECK(std::abs(nextb[static_cast<size_t>(k)] - nexta[static_cast<size_t>(k)]) < 1e-12);
  for (int j = 0; j < a.joint_count(); ++j)
    for (int k = 0; k < 2; ++k) {
      const auto da = static_cast<size_t>(sim::kBodyStateDim + 2 * j + k);
      const auto db =
          static_cast<size_t>(sim::kBodyStateDim) + 2 * static_cast<size_t>(jm[static_cast<size_t>(j)]) +
          static_cast<size_t>(k);
      CHECK(std::abs(nextb[db] - nexta[da]) < 1e-12);
    }

  NodeNetworkSet tor(Role::kTorque, {}, 15);
  randomize_decoders(tor, 150);
  const auto ta = torque_step(tor, a, sim::state_from_vector(a, sva), acta);
  const auto tb = torque_step(tor, b, sim::state_from_vector(b, svb), actb);
  for (int j = 0; j < a.joint_count(); ++j)
    CHECK(std::abs(tb[static_cast<size_t>(jm[static_cast<size_t>(j)])] -
                   ta[static_cast<size_t>(j)]) < 1e-12);
}

TEST_CASE("hidden state carries memory and a fresh map removes it") {
  const auto& d = design::builtin_train_designs()[2];
  NodeNetworkSet net(Role::kPolicy, {}, 16);
  randomize_decoders(net, 160);
  const auto past_a = make_obs(d, 200);
  const auto past_b = make_obs(d, 201);
  const auto now = make_obs(d, 202);

  auto h1 = zero_hidden(d, net.config());
  policy_step(net, d, past_a, h1);
  const auto out_after_a = policy_step(net, d, now, h1);

  auto h2 = zero_hidden(d, net.config());
  policy_step(net, d, past_b, h2);
  const auto out_after_b = policy_step(net, d, now, h2);
  CHECK(max_abs_diff(out_after_a.mean, out_after_b.mean) > 1e-9);

  auto h3 = zero_hidden(d, net.config());
  const auto fresh1 = policy_step(net, d, now, h3);
  auto h4 = zero_hidden(d, net.config());
  const auto fresh2 = policy_step(net, d, now, h4);
  CHECK(fresh1.mean == fresh2.mean);
  CHECK(fresh1.logvar == fresh2.logvar);
}

TEST_CASE("terrain affects the policy only through the local window") {
  const auto& d = design::builtin_train_designs()[1];
  NodeNetworkSet net(Role::kPolicy, {}, 17);
  randomize_decoders(net, 170);
  const auto hf = make_terrain(sim::TerrainKind::kStairs, 3, 4);
  sim::RobotState s = sim::reset(d, hf, 2);
  s.x = 1.0;
  s.z = hf.height(1.0) + design::geom::kStanceHeight;
  const sim::NoiseModel quiet{0.0, 0.0, 0.0};
  util::Rng rng(1);
  const auto base = sim::observe(s, hf, d, rng, quiet);

  // The window spans x in [0.75, 2.25]; edits past a two-cell margin are
  // invisible, edits inside are not.
  auto far = hf.samples();
  for (size_t i = 0; i < far.size(); ++i) {
    const double cell = sim::Heightfield::kXMin + static_cast<double>(i) * sim::Heightfield::kDx;
    if (cell < 0.65 || cell > 2.35) far[i] += 0.5;
  }
  const sim::Heightfield hf_far(hf.kind(), hf.level(), far);
  const auto obs_far = sim::observe(s, hf_far, d, rng, quiet);
  CHECK(obs_far.window == base.window);
  auto h1 = zero_hidden(d, net.config());
  auto h2 = zero_hidden(d, net.config());
  const auto out_base = policy_step(net, d, base, h1);
  const auto out_far = policy_step(net, d, obs_far, h2);
  CHECK(out_far.mean == out_base.mean);
  CHECK(out_far.logvar == out_base.logvar);

  auto near = hf.samples();
  near[static_cast<size_t>((1.5 - sim::Heightfield::kXMin) / sim::Heightfield::kDx)] += 0.07;
  const sim::Heightfield hf_near(hf.kind(), hf.level(), near);
  const auto obs_near = sim::observe(s, hf_near, d, rng, quiet);
  CHECK(obs_near.window != base.window);
  auto h3 = zero_hidden(d, net.config());
  const auto out_near = policy_step(net, d, obs_near, h3);
  CHECK(max_abs_diff(out_near.mean, out_base.mean) > 1e-9);
}

TEST_CASE("terrain statistics update only in training mode") {
  const auto& d = design::builtin_train_designs()[0];
  NodeNetworkSet net(Role::kPolicy, {}, 18);
  const auto obs = make_obs(d, 300);
  const std::vector<double> window(obs.window.begin(), obs.window.end());

  auto h = zero_hidden(d, net.config());
  policy_step(net, d, obs, h);
  CHECK(net.params().value("body/terrain/count").at(0) == 0.0);

  diff::Tape tape;
  const diff::Binding w(tape, net.params(), false);
  auto h2 = zero_hidden(d, net.config());
  policy_forward(net, w, d, policy_node_inputs(d, obs), window, h2, true);
  CHECK(net.params().value("body/terrain/count").at(0) == 1.0);
  double mu_mag = 0.0;
  for (double v : net.params().value("body/terrain/mu").values()) mu_mag += std::abs(v);
  CHECK(mu_mag > 0.0);
}

TEST_CASE("parameters round-trip through a checkpoint") {
  NodeNetworkSet net(Role::kPolicy, {}, 19);
  randomize_decoders(net, 190);
  const auto& d = design::builtin_train_designs()[2];
  const auto obs = make_obs(d, 400);
  auto h1 = zero_hidden(d, net.config());
  const auto before = policy_step(net, d, obs, h1);

  const std::string path = "test_gnn_ckpt.bin";
  diff::write_tensors(path, net.params().export_tensors("policy/"));
  NodeNetworkSet fresh(Role::kPolicy, {}, 99);
  const size_t loaded = fresh.params().load_tensors(diff::read_tensors(path), "policy/");
  CHECK(loaded == fresh.params().size());
  auto h2 = zero_hidden(d, fresh.config());
  const auto after = policy_step(fresh, d, obs, h2);
  CHECK(after.mean == before.mean);
  CHECK(after.logvar == before.logvar);
  std::remove(path.c_str());
}

TEST_CASE("forwards reject mismatched roles") {
  NodeNetworkSet pol(Role::kPolicy, {}, 23);
  const auto& d = design::builtin_train_designs()[0];
  diff::Tape tape;
  const diff::Binding w(tape, pol.params(), true);
  const Tensor s = Tensor::of(random_state_vector(d, 500));
  const Tensor a = Tensor::of(random_action(d, 501));
  CHECK_THROWS_AS(model_forward(pol, w, d, s, a, std::vector<double>(sim::kWindowSize, 0.0), false),
                  GnnError);
  CHECK_THROWS_AS(torque_forward(pol, w, d, s, a), GnnError);
}

TEST_CASE("model gradient matches central differences") {
  const NetConfig cfg{8, 8, 1};
  NodeNetworkSet net(Role::kModel, cfg, 27);
  randomize_decoders(net, 270);
  net.set_delta_stats(ModuleKind::kBody, {0.1, 0, 0, 0, 0, 0}, {1.3, 1, 1, 1, 1, 1});
  net.set_delta_stats(ModuleKind::kLeg, {0, 0.1, 0, 0}, {1, 1.3, 1, 1});
  net.set_delta_stats(ModuleKind::kWheel, {0, 0.1}, {1, 1.3});
  const auto& d = design::builtin_train_designs()[0];
  const auto sv = random_state_vector(d, 600);
  const auto av = random_action(d, 601);
  util::Rng rng(602);
  std::vector<double> window(sim::kWindowSize);
  for (auto& v : window) v = 0.2 * rng.gaussian();
  const double err = diff::grad_check_params(
      [&](const diff::Binding& w) {
        const Tensor next =
            model_forward(net, w, d, Tensor::of(sv), Tensor::of(av), window, false);
        return diff::sum(diff::square(next));
      },
      net.params());
  CHECK(err < 1e-4);
}

TEST_CASE("recurrent policy gradient matches central differences over three steps") {
  const NetConfig cfg{4, 4, 1};
  NodeNetworkSet net(Role::kPolicy, cfg, 29);
  randomize_decoders(net, 290);
  const auto& d = design::builtin_train_designs()[1];
  const sim::Observation obs[3] = {make_obs(d, 700), make_obs(d, 701), make_obs(d, 702)};
  const double err = diff::grad_check_params(
      [&](const diff::Binding& w) {
        auto h = zero_hidden(d, cfg);
        Tensor loss;
        for (int t = 0; t < 3; ++t) {
          const std::vector<double> window(obs[t].window.begin(), obs[t].window.end());
          const auto out = policy_forward(net, w, d, policy_node_inputs(d, obs[t]), window, h, false);
          const Tensor term = diff::sum(diff::square(out.mean));
          loss = t == 0 ? term : diff::add(loss, term);
        }
        return loss;
      },
      net.params());
  CHECK(err < 1e-4);
}

TEST_CASE("model trained on a linear system approaches the least-squares floor") {
  const auto sys = testsupport::make_linear_system(6000, 77);
  CHECK(sim::state_dim(sys.d) == 20);
  const double ols = testsupport::ols_validation_nmse(sys);

  NodeNetworkSet net(Role::kModel, {}, 31);
  testsupport::apply_delta_stats(net, sys);
  testsupport::fit_linear_system(net, sys, 20, 32);
  const double fitted = testsupport::gnn_validation_nmse(net, sys);
  CAPTURE(ols);
  CAPTURE(fitted);
  CHECK(ols < 5e-4);
  CHECK(fitted < 1e-3);
  CHECK(fitted <= 5.0 * ols);
}
