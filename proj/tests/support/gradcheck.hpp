#pragma once

// Central finite-difference gradient checks against the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "oneshot/ops.hpp"
#include "oneshot/random.hpp"
#include "oneshot/tensor.hpp"

namespace oneshot::testing {

using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheck {
  double max_rel_error = 0.0;  // over inputs, |analytic - numeric| / (|analytic| + |numeric|) as 2-norms
  std::size_t worst_input = 0;
};

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences of step h, per input tensor.
inline GradCheck check_gradients(const LossFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = f(tape, inputs);
    tape.backward(loss);
  }
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      auto eval = [&](double v) {
        x.mutable_values()[i] = v;
        Tape tape = Tape::inference();
        return f(tape, inputs).item();
      };
      const double numeric = (eval(saved + h) - eval(saved - h)) / (2.0 * h);
      x.mutable_values()[i] = saved;
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      norm_a += analytic[i] * analytic[i];
      norm_n += numeric * numeric;
    }
    const double denom = std::sqrt(norm_a) + std::sqrt(norm_n);
    const double rel = denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_input = k;
    }
  }
  return out;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

/// sum(out * w) for a fixed random w, so every output element gets a distinct weight.
inline Tensor project(Tape& tape, const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(tape, mul(tape, out, random_tensor(rng, out.shape())));
}

}  // namespace oneshot::testing
