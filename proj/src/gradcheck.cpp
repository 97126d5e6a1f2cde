#include "fmvit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fmvit {

std::vector<Tensor> analytic_gradients(const std::function<Tensor()>& f, std::span<const Tensor> xs) {
  Tape tape;
  GradientMap grads;
  {
    Tape::Scope scope(tape);
    Tensor loss = f();
    grads = tape.backward(loss);
  }
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(grads.of(x));
  return out;
}

double central_difference(const std::function<Tensor()>& f, Tensor x, std::size_t index, double step) {
  NoGrad no_grad;
  auto data = x.mutable_data();
  const double original = data[index];
  data[index] = original + step;
  const double plus = f().item();
  data[index] = original - step;
  const double minus = f().item();
  data[index] = original;
  return (plus - minus) / (2.0 * step);
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, Tensor x, const GradCheckOptions& options) {
  GradCheckReport report;
  const Tensor xs[] = {x};
  const Tensor grad = analytic_gradients(f, xs)[0];

  std::vector<std::size_t> indices = options.indices;
  if (indices.empty()) {
    indices.resize(x.numel());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  for (std::size_t idx : indices) {
    const double a = grad.data()[idx];
    const double n = central_difference(f, x, idx, options.step);
    report.analytic.push_back(a);
    report.numeric.push_back(n);
    const double abs_err = std::abs(a - n);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(n), options.floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = idx;
    }
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace fmvit
