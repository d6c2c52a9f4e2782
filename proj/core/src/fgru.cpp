#include "pgroup/fgru.hpp"

#include <cmath>

namespace pgroup {

void FGruConfig::validate() const {
  require(channels > 0, "fgru: channel count must be positive");
  require(kernel % 2 == 1 && gate_kernel % 2 == 1, "fgru: kernel sizes must be odd");
  require(timesteps >= 1, "fgru: at least one timestep");
}

const char* bn_site_name(BnSite site) {
  switch (site) {
    case BnSite::gain_gate: return "gain";
    case BnSite::suppression: return "suppress";
    case BnSite::mix_gate: return "mix";
    case BnSite::facilitation: return "facilitate";
  }
  return "?";
}

template <std::floating_point T>
Var<T> ParamBinder<T>::operator()(const Tensor<T>& t) {
  if (auto it = vars_.find(&t); it != vars_.end()) return it->second;
  Var<T> v = learnable_ ? tape_->leaf(t) : tape_->constant(t);
  vars_.emplace(&t, v);
  return v;
}

template <std::floating_point T>
const Var<T>* ParamBinder<T>::find(const Tensor<T>& t) const {
  auto it = vars_.find(&t);
  return it == vars_.end() ? nullptr : &it->second;
}

template <std::floating_point T>
Var<T> apply_batchnorm(const Var<T>& x, BatchNormParams<T>& bn, Mode mode, ParamBinder<T>& bind) {
  if (mode == Mode::train) return batchnorm(x, bind(bn.scale), bind(bn.bias), bn.stats, Mode::train);
  return batchnorm_eval(x, bind(bn.scale), bind(bn.bias), bn.stats);
}

template <std::floating_point T>
Var<T> fgru_step(const Var<T>& x, const Var<T>& h_prev, FGruParams<T>& p, std::size_t t, Mode mode,
                 ParamBinder<T>& bind, FGruStepTrace<T>* trace) {
  require(x.shape() == h_prev.shape(), "fgru_step: drive and state shapes differ: " + shape_string(x.shape()) +
                                           " vs " + shape_string(h_prev.shape()));
  require(x.shape().size() == 4 && x.shape()[1] == p.config.channels,
          "fgru_step: expected (N, " + std::to_string(p.config.channels) + ", H, W) input, got " +
              shape_string(x.shape()));
  require(t < p.config.timesteps && t < p.bn.size(), "fgru_step: timestep out of range");

  auto bn = [&](const Var<T>& v, BnSite s) { return apply_batchnorm(v, p.site(t, s), mode, bind); };

  // Suppression stage.
  const Var<T> g_i = sigmoid(bn(conv2d(h_prev, bind(p.U_I)), BnSite::gain_gate));
  const Var<T> c_i = bn(conv2d(mul(h_prev, g_i), bind(p.W_I)), BnSite::suppression);
  const Var<T> inhibition = relu(mul(add(mul(h_prev, bind(p.alpha)), bind(p.mu)), c_i));
  const Var<T> z = relu(sub(x, inhibition));

  // Facilitation stage.
  const Var<T> g_e = sigmoid(bn(conv2d(z, bind(p.U_E)), BnSite::mix_gate));
  const Var<T> c_e = bn(conv2d(z, bind(p.W_E)), BnSite::facilitation);
  const Var<T> candidate = relu(add(mul(add(c_e, z), bind(p.kappa)), mul(mul(c_e, z), bind(p.omega))));
  const Var<T> h = mix(g_e, h_prev, candidate);

  if (trace) {
    trace->gain_gate = g_i.value();
    trace->suppression = c_i.value();
    trace->z = z.value();
    trace->mix_gate = g_e.value();
    trace->facilitation = c_e.value();
    trace->candidate = candidate.value();
  }
  return h;
}

template <std::floating_point T>
Var<T> topdown_blend(const Var<T>& h_low, const Var<T>& h_out, const Var<T>& beta) {
  require(h_low.shape() == h_out.shape(), "topdown_blend: state shapes differ");
  return mix(sigmoid(beta), h_out, h_low);
}

template <std::floating_point T>
Tensor<T> fan_in_uniform(Shape shape, Rng& rng) {
  require(shape.size() >= 2, "fan_in_uniform: kernel needs at least two axes");
  std::size_t fan_in = 1;
  for (std::size_t a = 1; a < shape.size(); ++a) fan_in *= shape[a];
  const double bound = std::sqrt(6.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> w(std::move(shape));
  for (auto& v : w.values()) v = T(dist(rng));
  return w;
}

std::vector<double> chronos_bias(std::size_t channels, std::size_t timesteps, Rng& rng) {
  const double hi = double(std::max<std::size_t>(timesteps, 2) - 1);
  std::uniform_real_distribution<double> dist(1.0, hi);
  std::vector<double> b(channels);
  for (auto& v : b) v = hi > 1.0 ? std::log(dist(rng)) : 0.0;
  return b;
}

template <std::floating_point T>
FGruParams<T> init_fgru(const FGruConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t k = cfg.channels;
  FGruParams<T> p;
  p.config = cfg;
  p.U_I = fan_in_uniform<T>({k, k, cfg.gate_kernel, cfg.gate_kernel}, rng);
  p.U_E = fan_in_uniform<T>({k, k, cfg.gate_kernel, cfg.gate_kernel}, rng);
  p.W_I = fan_in_uniform<T>({k, k, cfg.kernel, cfg.kernel}, rng);
  p.W_E = fan_in_uniform<T>({k, k, cfg.kernel, cfg.kernel}, rng);
  p.alpha = Tensor<T>({k}, T(0.1));
  p.mu = Tensor<T>({k}, T(0));
  p.kappa = Tensor<T>({k}, T(0));
  p.omega = Tensor<T>({k}, T(0.1));

  const std::vector<double> b = chronos_bias(k, cfg.timesteps, rng);
  p.bn.resize(cfg.timesteps);
  for (auto& sites : p.bn) {
    for (auto& s : sites) s = BatchNormParams<T>(k, T(0.1));
    for (std::size_t c = 0; c < k; ++c) {
      sites[std::size_t(BnSite::gain_gate)].bias[c] = T(-b[c]);
      sites[std::size_t(BnSite::mix_gate)].bias[c] = T(b[c]);
    }
  }
  if (cfg.topdown_blend) p.beta = Tensor<T>({k}, T(0));
  return p;
}

#define PGROUP_INSTANTIATE_FGRU(T)                                                                           \
  template class ParamBinder<T>;                                                                             \
  template Var<T> apply_batchnorm(const Var<T>&, BatchNormParams<T>&, Mode, ParamBinder<T>&);                \
  template Var<T> fgru_step(const Var<T>&, const Var<T>&, FGruParams<T>&, std::size_t, Mode, ParamBinder<T>&, \
                            FGruStepTrace<T>*);                                                              \
  template Var<T> topdown_blend(const Var<T>&, const Var<T>&, const Var<T>&);                                \
  template Tensor<T> fan_in_uniform(Shape, Rng&);                                                            \
  template FGruParams<T> init_fgru(const FGruConfig&, Rng&);

PGROUP_INSTANTIATE_FGRU(float)
PGROUP_INSTANTIATE_FGRU(double)

}  // namespace pgroup
