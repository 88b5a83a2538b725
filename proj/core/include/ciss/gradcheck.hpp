#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "ciss/tape.hpp"
#include "ciss/tensor.hpp"

namespace ciss {

struct GradCheckReport {
  double max_rel_error = 0.0;
  // Position of the worst coordinate: parameter index and flat offset.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;
};

// Builds a scalar loss on the given tape from tensors it closes over.
using LossFn = std::function<Tensor(Tape&)>;

// Compares the tape's analytic gradient with central differences
// (f(x + eps e_k) - f(x - eps e_k)) / (2 eps) for every coordinate of every
// tensor in `params`. Relative error uses max(|analytic|, |numeric|, 1e-8)
// as the denominator. `params` must require grad; their grads are zeroed
// before and left holding the analytic gradient afterwards.
//
// Throws Error when `f` is not deterministic (two evaluations at the same
// point disagree).
GradCheckReport check_gradients(const LossFn& f, std::span<Tensor> params,
                                double eps = 1e-5, double tol = 1e-4);

// Single-tensor convenience form: f receives the point being probed.
GradCheckReport check_gradients(
    const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor at,
    double eps = 1e-5, double tol = 1e-4);

}  // namespace ciss
