// Finite-difference gradient checking.
//
// Compares the analytic gradient of a scalar-valued tensor function against
// central differences, coordinate by coordinate, and reports the worst
// relative error  max |a - n| / max(|a|, |n|, 1e-8).
#pragma once

#include <vector>

#include "voxrender/rng.hpp"
#include "voxrender/tensor.hpp"

namespace voxrender {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t probes = 0;
};

/// `make_loss` rebuilds the scalar loss graph from the current values of
/// `inputs` (leaf tensors shared with the closure). `probes_per_input` = 0
/// checks every coordinate.
template <class T, class F>
GradCheckReport grad_check(F&& make_loss, std::vector<Tensor<T>> inputs, T h = static_cast<T>(1e-6),
                           std::size_t probes_per_input = 0, Rng rng = Rng(0)) {
  for (auto& t : inputs) t.zero_grad();
  Tensor<T> loss = make_loss();
  check_arg(loss.size() == 1, "grad_check: function must be scalar-valued");
  backward(loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.push_back(t.grad());

  GradCheckReport report;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    if (!t.requires_grad()) continue;
    std::vector<std::size_t> coords;
    if (probes_per_input == 0 || probes_per_input >= t.size()) {
      coords.resize(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < probes_per_input; ++i)
        coords.push_back(static_cast<std::size_t>(rng.next() % t.size()));
    }
    for (std::size_t c : coords) {
      const T saved = t.value()[c];
      t.value()[c] = saved + h;
      const double lo_hi = static_cast<double>(make_loss().item());
      t.value()[c] = saved - h;
      const double lo_lo = static_cast<double>(make_loss().item());
      t.value()[c] = saved;
      const double numeric = (lo_hi - lo_lo) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[ti][c]);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.probes;
    }
  }
  return report;
}

}  // namespace voxrender
