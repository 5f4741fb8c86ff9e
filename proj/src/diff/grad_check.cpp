#include "modbot/diff/grad_check.hpp"

#include <cmath>

namespace modbot::diff {

namespace {

double rel_err(double analytic, double central) {
  return std::abs(analytic - central) / std::max(1.0, std::abs(central));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tape tape;
  Tensor xt = tape.leaf(x);
  Tensor y = f(xt);
  tape.backward(y);
  std::vector<double> analytic = tape.grad(xt);

  double worst = 0.0;
  std::vector<double> probe = x.values();
  for (size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(Tensor::of(x.shape(), probe)).scalar();
    probe[i] = saved - eps;
    const double down = f(Tensor::of(x.shape(), probe)).scalar();
    probe[i] = saved;
    const double central = (up - down) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[i], central));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor(const Binding&)>& loss_fn, ParamStore& store,
                         double eps) {
  GradMap analytic;
  {
    Tape tape;
    Binding binding(tape, store);
    Tensor loss = loss_fn(binding);
    analytic = backward(loss, binding);
  }

  auto eval = [&]() {
    Tape tape;
    Binding binding(tape, store, /*frozen=*/true);
    return loss_fn(binding).scalar();
  };

  double worst = 0.0;
  for (const auto& name : store.names()) {
    if (!store.trainable(name)) continue;
    std::vector<double>& w = store.value(name).mut();
    const std::vector<double>& a = analytic.at(name);
    for (size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double up = eval();
      w[i] = saved - eps;
      const double down = eval();
      w[i] = saved;
      const double central = (up - down) / (2.0 * eps);
      worst = std::max(worst, rel_err(a[i], central));
    }
  }
  return worst;
}

}  // namespace modbot::diff
