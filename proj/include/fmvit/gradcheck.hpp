#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "fmvit/tensor.hpp"

namespace fmvit {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  /// near-zero gradients from turning rounding noise into large ratios.
  double floor = 1e-8;
  /// Check only these flat indices; empty means every element.
  std::vector<std::size_t> indices;
};

/// Compares the tape gradient of a scalar function w.r.t. `x` against central
/// differences. `f` must rebuild its graph from `x` on every call; `x` is
/// perturbed in place and restored afterwards.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, Tensor x,
                                  const GradCheckOptions& options = {});

/// Analytic gradient of `f` w.r.t. each tensor in `xs` from one backward pass.
std::vector<Tensor> analytic_gradients(const std::function<Tensor()>& f, std::span<const Tensor> xs);

/// Central-difference derivative of `f` w.r.t. x[index], evaluated without a tape.
double central_difference(const std::function<Tensor()>& f, Tensor x, std::size_t index, double step);

}  // namespace fmvit
