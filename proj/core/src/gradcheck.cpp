#include "pgroup/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pgroup {
namespace {

struct Evaluation {
  double value;
  std::uint64_t kinks;
};

Evaluation evaluate(const ScalarFunction& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  tape.set_track_kinks(true);
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  const Var<double> out = fn(tape, leaves);
  return {out.value().item(), tape.kink_signature()};
}

}  // namespace

GradCheckResult check_gradients(const ScalarFunction& fn, const std::vector<Tensor<double>>& inputs,
                                const GradCheckOptions& opts) {
  Tape<double> tape;
  tape.set_track_kinks(true);
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const Var<double> out = fn(tape, leaves);
  const std::uint64_t base_kinks = tape.kink_signature();
  const Gradients<double> grads = tape.backward(out);

  GradCheckResult result;
  result.passed = true;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& analytic = grads.at(leaves[k]);
    GradCheckInputReport report;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + opts.step;
      const Evaluation plus = evaluate(fn, probe);
      probe[k][i] = x0 - opts.step;
      const Evaluation minus = evaluate(fn, probe);
      probe[k][i] = x0;
      if (opts.skip_kinks && (plus.kinks != base_kinks || minus.kinks != base_kinks)) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2 * opts.step);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++report.checked;
    }
    const double denom = std::sqrt(std::max(a2, n2));
    report.relative_error = denom > 0 ? std::sqrt(diff2) / denom : 0.0;
    result.max_relative_error = std::max(result.max_relative_error, report.relative_error);
    if (report.relative_error > opts.tolerance) result.passed = false;
    result.inputs.push_back(report);
  }
  return result;
}

}  // namespace pgroup
