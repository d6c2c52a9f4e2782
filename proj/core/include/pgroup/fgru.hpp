#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pgroup/ops.hpp"
#include "pgroup/rng.hpp"

namespace pgroup {

struct FGruConfig {
  std::size_t channels = 20;
  std::size_t kernel = 15;      ///< spatial extent of W_I / W_E
  std::size_t gate_kernel = 1;  ///< spatial extent of U_I / U_E
  std::size_t timesteps = 8;
  bool topdown_blend = false;

  void validate() const;
  friend bool operator==(const FGruConfig&, const FGruConfig&) = default;
};

/// Learnable scale/bias of one batch-norm application plus its running statistics.
template <std::floating_point T>
struct BatchNormParams {
  Tensor<T> scale;
  Tensor<T> bias;
  BatchNormStats<T> stats;

  BatchNormParams() = default;
  explicit BatchNormParams(std::size_t channels, T scale_init = T(1))
      : scale(Shape{channels}, scale_init), bias(Shape{channels}), stats(channels) {}
};

/// The four normalisation sites of one fGRU step.
enum class BnSite : std::size_t { gain_gate = 0, suppression = 1, mix_gate = 2, facilitation = 3 };
inline constexpr std::size_t kBnSites = 4;
const char* bn_site_name(BnSite site);

template <std::floating_point T>
struct FGruParams {
  FGruConfig config;
  Tensor<T> U_I, U_E;  ///< (K, K, gate_kernel, gate_kernel)
  Tensor<T> W_I, W_E;  ///< (K, K, kernel, kernel)
  Tensor<T> alpha, mu, kappa, omega;
  /// bn[t][site]: one independent normalisation per site and timestep.
  std::vector<std::array<BatchNormParams<T>, kBnSites>> bn;
  std::optional<Tensor<T>> beta;

  BatchNormParams<T>& site(std::size_t t, BnSite s) { return bn.at(t)[std::size_t(s)]; }
  const BatchNormParams<T>& site(std::size_t t, BnSite s) const { return bn.at(t)[std::size_t(s)]; }

  /// Calls f(name, Tensor&) for every learnable tensor.
  template <class F>
  void visit_parameters(F&& f) {
    f("U_I", U_I);
    f("U_E", U_E);
    f("W_I", W_I);
    f("W_E", W_E);
    f("alpha", alpha);
    f("mu", mu);
    f("kappa", kappa);
    f("omega", omega);
    for (std::size_t t = 0; t < bn.size(); ++t)
      for (std::size_t s = 0; s < kBnSites; ++s) {
        const std::string prefix = std::string("bn_") + bn_site_name(BnSite(s)) + "_t" + std::to_string(t);
        f(prefix + ".scale", bn[t][s].scale);
        f(prefix + ".bias", bn[t][s].bias);
      }
    if (beta) f("beta", *beta);
  }

  /// Calls f(name, Tensor&) for every running statistic.
  template <class F>
  void visit_buffers(F&& f) {
    for (std::size_t t = 0; t < bn.size(); ++t)
      for (std::size_t s = 0; s < kBnSites; ++s) {
        const std::string prefix = std::string("bn_") + bn_site_name(BnSite(s)) + "_t" + std::to_string(t);
        f(prefix + ".running_mean", bn[t][s].stats.running_mean);
        f(prefix + ".running_var", bn[t][s].stats.running_var);
      }
  }
};

/// Maps parameter tensors to tape variables. Each tensor is bound once per
/// tape, so a kernel reused across timesteps accumulates a single gradient.
template <std::floating_point T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, bool learnable) : tape_(&tape), learnable_(learnable) {}

  Var<T> operator()(const Tensor<T>& t);
  /// Binds `t` to an existing variable (used by gradient checks).
  void set(const Tensor<T>& t, Var<T> v) { vars_[&t] = v; }
  const Var<T>* find(const Tensor<T>& t) const;

  Tape<T>& tape() const { return *tape_; }
  bool learnable() const { return learnable_; }

 private:
  Tape<T>* tape_;
  bool learnable_;
  std::unordered_map<const Tensor<T>*, Var<T>> vars_;
};

/// Normalises `x` with one BatchNormParams instance (train or eval).
template <std::floating_point T>
Var<T> apply_batchnorm(const Var<T>& x, BatchNormParams<T>& bn, Mode mode, ParamBinder<T>& bind);

/// Intermediate activations of one step.
template <std::floating_point T>
struct FGruStepTrace {
  Tensor<T> gain_gate, suppression, z, mix_gate, facilitation, candidate;
};

/// One state update H[t] from drive `x` and previous state `h_prev`.
template <std::floating_point T>
Var<T> fgru_step(const Var<T>& x, const Var<T>& h_prev, FGruParams<T>& p, std::size_t t, Mode mode,
                 ParamBinder<T>& bind, FGruStepTrace<T>* trace = nullptr);

/// (1 - sigmoid(beta)) * h_out + sigmoid(beta) * h_low, beta per channel.
template <std::floating_point T>
Var<T> topdown_blend(const Var<T>& h_low, const Var<T>& h_out, const Var<T>& beta);

/// Uniform kernel draw with bound sqrt(6 / fan_in).
template <std::floating_point T>
Tensor<T> fan_in_uniform(Shape shape, Rng& rng);

/// Gate time constants u ~ U[1, max(T, 2) - 1]; returns log(u) per channel.
std::vector<double> chronos_bias(std::size_t channels, std::size_t timesteps, Rng& rng);

template <std::floating_point T>
FGruParams<T> init_fgru(const FGruConfig& cfg, Rng& rng);

}  // namespace pgroup
