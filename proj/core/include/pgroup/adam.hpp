#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pgroup/tensor.hpp"

namespace pgroup {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments per parameter plus the bias-correction step count.
template <std::floating_point T>
struct AdamState {
  AdamOptions options;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step = 0;

  explicit AdamState(AdamOptions opts = {}) : options(opts) {}
};

/// One bias-corrected Adam update applied in place. Moments are allocated on
/// the first call and must keep matching the parameter shapes afterwards.
template <std::floating_point T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state);

}  // namespace pgroup
