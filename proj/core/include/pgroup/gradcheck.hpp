#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pgroup/tape.hpp"

namespace pgroup {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-5;
  /// Skip coordinates whose +/- perturbation changes a relu/max branch.
  bool skip_kinks = true;
};

struct GradCheckInputReport {
  double relative_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

struct GradCheckResult {
  std::vector<GradCheckInputReport> inputs;
  double max_relative_error = 0;
  bool passed = false;
};

/// Builds a scalar from leaves bound to the given inputs (in order).
using ScalarFunction = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of `fn` against central finite differences.
///
/// The numeric side only ever evaluates `fn` forward. Per input, the error is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||) over the checked
/// coordinates (zero when both vanish).
GradCheckResult check_gradients(const ScalarFunction& fn, const std::vector<Tensor<double>>& inputs,
                                const GradCheckOptions& opts = {});

}  // namespace pgroup
