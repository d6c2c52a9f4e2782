#pragma once

#include <string>
#include <vector>

#include "pgroup/fgru.hpp"
#include "pgroup/keyvalue.hpp"

namespace pgroup {

/// TD+H: horizontal and top-down feedback. TD: fGRU1 made local (1x1).
/// H: top-down loop removed (no fGRU3). BU: both lesions and a single timestep.
enum class Variant { td_h, td, h, bu };
enum class Task { classification, segmentation };

std::string variant_name(Variant v);  // "tdh", "td", "h", "bu"
Variant parse_variant(const std::string& s);
std::string task_name(Task t);
Task parse_task(const std::string& s);

struct ArchitectureConfig {
  Variant variant = Variant::td_h;
  Task task = Task::classification;
  std::size_t timesteps = 8;
  std::size_t image_size = 128;
  std::size_t conv_channels = 20;
  std::size_t conv_kernel = 7;
  std::size_t horizontal_kernel = 15;  ///< fGRU1 kernel when not lesioned
  std::size_t ds_channels1 = 32;
  std::size_t ds_channels2 = 128;
  std::size_t ds_layers = 3;  ///< conv layers per downsampling stack
  std::size_t ds_kernel = 3;
  std::size_t us_kernel = 4;
  std::size_t segmentation_hidden = 20;

  void validate() const;
  bool has_topdown() const { return variant == Variant::td_h || variant == Variant::td; }
  std::size_t fgru1_kernel() const;
  std::size_t effective_timesteps() const { return variant == Variant::bu ? 1 : timesteps; }

  void write(KeyValueConfig& kv, const std::string& prefix = "model.") const;
  static ArchitectureConfig read(const KeyValueConfig& kv, const std::string& prefix = "model.");

  friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

template <std::floating_point T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <std::floating_point T>
struct ModelState {
  ArchitectureConfig config;

  ConvLayer<T> conv1, conv2;
  FGruParams<T> fgru1;
  std::vector<BatchNormParams<T>> pool_bn;               ///< [t], applied to H1 before pooling
  std::vector<ConvLayer<T>> ds;                          ///< 2 * ds_layers convolutions
  std::vector<std::vector<BatchNormParams<T>>> ds_bn;    ///< [t][layer]
  FGruParams<T> fgru2;
  std::vector<ConvLayer<T>> us;                          ///< two transpose convolutions, w: (Cin, Cout, k, k)
  std::vector<std::vector<BatchNormParams<T>>> us_bn;    ///< [t][layer]
  std::optional<FGruParams<T>> fgru3;
  BatchNormParams<T> final_bn;
  ConvLayer<T> readout1, readout2;

  /// Calls f(name, Tensor&) for every learnable tensor in a fixed order.
  template <class F>
  void visit_parameters(F&& f);
  /// Calls f(name, Tensor&) for every running statistic.
  template <class F>
  void visit_buffers(F&& f);

  std::size_t parameter_count();
  std::vector<std::string> parameter_names();
};

template <std::floating_point T>
ModelState<T> build_model(const ArchitectureConfig& cfg, Rng& rng);

/// Per-timestep copies of the recurrent states.
template <std::floating_point T>
struct ForwardTrace {
  std::vector<Tensor<T>> h1;
  std::vector<Tensor<T>> h2;  ///< empty when the variant has no top-down loop
  /// H1 right after fGRU1, before the top-down blend (equals h1 without one).
  std::vector<Tensor<T>> h1_horizontal;
};

/// Runs the unrolled network on images (N, 1, S, S) and returns classification
/// logits (N, 1, 1, 1) or segmentation logits (N, 1, S, S), per config.task.
template <std::floating_point T>
Var<T> forward(ModelState<T>& m, ParamBinder<T>& bind, const Tensor<T>& images, Mode mode,
               ForwardTrace<T>* trace = nullptr);

/// conv1x1 + relu, global max pool, conv1x1 -> one logit per image.
template <std::floating_point T>
Var<T> readout(ModelState<T>& m, ParamBinder<T>& bind, const Var<T>& h1);

/// conv1x1 + relu, conv1x1 -> per-pixel logits.
template <std::floating_point T>
Var<T> segmentation_readout(ModelState<T>& m, ParamBinder<T>& bind, const Var<T>& h1);

/// Mean binary cross-entropy of logits against {0, 1} labels of equal size.
template <std::floating_point T>
Var<T> loss(const Var<T>& logits, const Tensor<T>& labels);

/// Eval-mode forward without gradient bookkeeping.
template <std::floating_point T>
Tensor<T> predict(ModelState<T>& m, const Tensor<T>& images, ForwardTrace<T>* trace = nullptr);

// ---------------------------------------------------------------------------

template <std::floating_point T>
template <class F>
void ModelState<T>::visit_parameters(F&& f) {
  auto conv = [&](const std::string& name, ConvLayer<T>& c) {
    f(name + ".weight", c.weight);
    f(name + ".bias", c.bias);
  };
  auto norm = [&](const std::string& name, BatchNormParams<T>& b) {
    f(name + ".scale", b.scale);
    f(name + ".bias", b.bias);
  };
  auto sub = [&](const std::string& prefix, FGruParams<T>& p) {
    p.visit_parameters([&](const std::string& name, Tensor<T>& t) { f(prefix + "." + name, t); });
  };
  conv("conv1", conv1);
  conv("conv2", conv2);
  sub("fgru1", fgru1);
  for (std::size_t t = 0; t < pool_bn.size(); ++t) norm("bn_pool_t" + std::to_string(t), pool_bn[t]);
  for (std::size_t l = 0; l < ds.size(); ++l) conv("ds" + std::to_string(l), ds[l]);
  for (std::size_t t = 0; t < ds_bn.size(); ++t)
    for (std::size_t l = 0; l < ds_bn[t].size(); ++l)
      norm("bn_ds" + std::to_string(l) + "_t" + std::to_string(t), ds_bn[t][l]);
  sub("fgru2", fgru2);
  for (std::size_t l = 0; l < us.size(); ++l) conv("us" + std::to_string(l), us[l]);
  for (std::size_t t = 0; t < us_bn.size(); ++t)
    for (std::size_t l = 0; l < us_bn[t].size(); ++l)
      norm("bn_us" + std::to_string(l) + "_t" + std::to_string(t), us_bn[t][l]);
  if (fgru3) sub("fgru3", *fgru3);
  norm("bn_final", final_bn);
  conv("readout1", readout1);
  conv("readout2", readout2);
}

template <std::floating_point T>
template <class F>
void ModelState<T>::visit_buffers(F&& f) {
  auto norm = [&](const std::string& name, BatchNormParams<T>& b) {
    f(name + ".running_mean", b.stats.running_mean);
    f(name + ".running_var", b.stats.running_var);
  };
  auto sub = [&](const std::string& prefix, FGruParams<T>& p) {
    p.visit_buffers([&](const std::string& name, Tensor<T>& t) { f(prefix + "." + name, t); });
  };
  sub("fgru1", fgru1);
  for (std::size_t t = 0; t < pool_bn.size(); ++t) norm("bn_pool_t" + std::to_string(t), pool_bn[t]);
  for (std::size_t t = 0; t < ds_bn.size(); ++t)
    for (std::size_t l = 0; l < ds_bn[t].size(); ++l)
      norm("bn_ds" + std::to_string(l) + "_t" + std::to_string(t), ds_bn[t][l]);
  sub("fgru2", fgru2);
  for (std::size_t t = 0; t < us_bn.size(); ++t)
    for (std::size_t l = 0; l < us_bn[t].size(); ++l)
      norm("bn_us" + std::to_string(l) + "_t" + std::to_string(t), us_bn[t][l]);
  if (fgru3) sub("fgru3", *fgru3);
  norm("bn_final", final_bn);
}

}  // namespace pgroup
