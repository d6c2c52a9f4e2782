#pragma once

#include <optional>

#include "pgroup/tape.hpp"

namespace pgroup {

enum class Mode { train, eval };

/// Threads used by the BLAS backend for every matrix product. One thread
/// gives bit-reproducible results across runs.
void set_gemm_threads(int n);

/// Padding value meaning "same" output size at stride 1 (odd kernels).
inline constexpr int kSamePadding = -1;

struct Conv2dOptions {
  int stride = 1;
  int padding = kSamePadding;
};

/// Cross-correlation. x: (N, Cin, H, W), w: (Cout, Cin, k, k), bias: (Cout).
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias = std::nullopt,
              Conv2dOptions opts = {});

/// Adjoint of conv2d with the same stride and padding.
/// x: (N, Cin, H, W), w: (Cin, Cout, k, k); output spatial size (H-1)*stride - 2*padding + k.
template <std::floating_point T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias = std::nullopt,
                        int stride = 2, int padding = 1);

template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, Conv2dOptions opts = {}) {
  return conv2d(x, w, std::optional<Var<T>>(bias), opts);
}

template <std::floating_point T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride = 2, int padding = 1) {
  return conv2d_transpose(x, w, std::optional<Var<T>>(bias), stride, padding);
}

/// 2x2 max pooling with stride 2. Odd spatial sizes replicate the last row/column.
template <std::floating_point T>
Var<T> maxpool2(const Var<T>& x);

/// Collapses each channel to its spatial maximum: (N, C, H, W) -> (N, C, 1, 1).
template <std::floating_point T>
Var<T> global_max_pool(const Var<T>& x);

/// Per-channel learnable scale/bias plus running statistics.
template <std::floating_point T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

struct BatchNormOptions {
  double eta = 1e-5;
  double momentum = 0.1;
};

/// Train mode normalises with batch statistics over (N, H, W) and folds them
/// into `stats` by exponential moving average; eval mode uses `stats` as is.
template <std::floating_point T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& scale, const Var<T>& bias, BatchNormStats<T>& stats, Mode mode,
                 BatchNormOptions opts = {});

/// Eval-mode batch normalisation; never touches the statistics.
template <std::floating_point T>
Var<T> batchnorm_eval(const Var<T>& x, const Var<T>& scale, const Var<T>& bias, const BatchNormStats<T>& stats,
                      BatchNormOptions opts = {});

// Elementwise. Binary ops accept a right operand of identical shape or a
// per-channel vector of length x.dim(1) broadcast over (N, H, W).
template <std::floating_point T> Var<T> sigmoid(const Var<T>& x);
template <std::floating_point T> Var<T> relu(const Var<T>& x);
template <std::floating_point T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> scale(const Var<T>& x, T factor);

/// (1 - gate) * a + gate * b. `gate` is same-shaped or a per-channel vector.
template <std::floating_point T>
Var<T> mix(const Var<T>& gate, const Var<T>& a, const Var<T>& b);

template <std::floating_point T> Var<T> sum(const Var<T>& x);
template <std::floating_point T> Var<T> mean(const Var<T>& x);
/// Sum of x * weights with a constant weight tensor.
template <std::floating_point T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

/// Mean binary cross-entropy computed from logits; targets must lie in {0, 1}.
template <std::floating_point T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets);

}  // namespace pgroup
