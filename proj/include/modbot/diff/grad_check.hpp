#pragma once

#include <functional>
#include <string>
#include <vector>

#include "modbot/diff/param_store.hpp"
#include "modbot/diff/tensor.hpp"

namespace modbot::diff {

// Central-difference gradient verification. f must be a pure scalar function
// of its input (fix any noise outside). Returns
//   max_i |analytic_i - central_i| / max(1, |central_i|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

// Same check for a scalar loss over every trainable parameter of a store.
// loss_fn builds the loss on a fresh tape through the given binding.
double grad_check_params(const std::function<Tensor(const Binding&)>& loss_fn, ParamStore& store,
                         double eps = 1e-5);

}  // namespace modbot::diff
