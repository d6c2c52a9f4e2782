#include "pgroup/adam.hpp"

#include <cmath>
#include <string>

namespace pgroup {

template <std::floating_point T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (const Tensor<T>* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  require(state.first_moment.size() == params.size(), "adam_step: parameter count changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k]->shape() == grads[k].shape() && params[k]->shape() == state.first_moment[k].shape(),
            "adam_step: shape mismatch for parameter " + std::to_string(k));
  }

  ++state.step;
  const AdamOptions& o = state.options;
  const double c1 = 1 - std::pow(o.beta1, double(state.step));
  const double c2 = 1 - std::pow(o.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>& g = grads[k];
    Tensor<T>& m = state.first_moment[k];
    Tensor<T>& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = T(o.beta1 * m[i] + (1 - o.beta1) * g[i]);
      v[i] = T(o.beta2 * v[i] + (1 - o.beta2) * double(g[i]) * g[i]);
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] = T(p[i] - o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon));
    }
  }
}

template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>, AdamState<double>&);

}  // namespace pgroup
