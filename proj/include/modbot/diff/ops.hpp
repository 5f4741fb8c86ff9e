#pragma once

#include <vector>

#include "modbot/diff/tape.hpp"
#include "modbot/diff/tensor.hpp"

namespace modbot::diff {

// Differentiable op suite. Every op works in two modes: if any input is
// recorded on a tape the result is recorded on the same tape, otherwise the
// value is computed eagerly and returned as a constant. Mixing inputs from
// two different tapes is an error.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// matmul: [m,k] x [k,n] -> [m,n], or [m,k] x [k] -> [m].
Tensor matmul(const Tensor& a, const Tensor& b);
// bias_add: [c,l] + [c] -> [c,l], bias broadcast along the row.
Tensor bias_add(const Tensor& a, const Tensor& bias);

Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);   // all elements -> scalar
Tensor mean(const Tensor& a);  // all elements -> scalar

Tensor concat(const Tensor& a, const Tensor& b);          // 1-D
Tensor concat_all(const std::vector<Tensor>& parts);      // 1-D, left fold
Tensor slice(const Tensor& a, int64_t start, int64_t len);  // 1-D

// Valid (no padding) 1-D convolution. input [c_in, l], kernel
// [c_out, c_in, k], output [c_out, (l - k) / stride + 1].
Tensor conv1d(const Tensor& input, const Tensor& kernel, int64_t stride);

// Same values under a new shape; element count must match.
Tensor reshape(const Tensor& a, std::vector<int64_t> shape);

// Pass-through gradient inside (lo, hi), zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);

// Elementwise log N(x; mean, exp(logvar)).
Tensor gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& logvar);

// Reparameterized sample: mean + exp(logvar / 2) * noise. noise is a plain
// constant; with noise = 0 the sample equals the mean exactly.
Tensor gaussian_sample(const Tensor& mean, const Tensor& logvar, const Tensor& noise);

// Stops gradient flow; value is shared.
Tensor detach(const Tensor& a);

// Gated recurrent cell composed from the primitive ops:
//   z = sigmoid(wz x + uz h + bz)
//   r = sigmoid(wr x + ur h + br)
//   n = tanh(wn x + r * (un h) + bn)
//   h' = (1 - z) * n + z * h
struct GruWeights {
  Tensor wz, uz, bz;
  Tensor wr, ur, br;
  Tensor wn, un, bn;
};
Tensor gru_cell(const GruWeights& w, const Tensor& x, const Tensor& h);

}  // namespace modbot::diff
