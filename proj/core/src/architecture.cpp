#include "pgroup/architecture.hpp"

#include <cmath>

namespace pgroup {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::td_h: return "tdh";
    case Variant::td: return "td";
    case Variant::h: return "h";
    case Variant::bu: return "bu";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "tdh" || s == "td+h") return Variant::td_h;
  if (s == "td") return Variant::td;
  if (s == "h") return Variant::h;
  if (s == "bu") return Variant::bu;
  throw ContractError("unknown variant '" + s + "' (expected tdh, td, h or bu)");
}

std::string task_name(Task t) { return t == Task::classification ? "classification" : "segmentation"; }

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "segmentation") return Task::segmentation;
  throw ContractError("unknown task '" + s + "' (expected classification or segmentation)");
}

void ArchitectureConfig::validate() const {
  require(timesteps >= 1, "architecture: at least one timestep");
  require(image_size >= 4 && image_size % 4 == 0, "architecture: image size must be a positive multiple of 4");
  require(conv_kernel % 2 == 1 && horizontal_kernel % 2 == 1 && ds_kernel % 2 == 1,
          "architecture: convolution kernels must be odd");
  require(conv_channels > 0 && ds_channels1 > 0 && ds_channels2 > 0 && ds_layers > 0 && segmentation_hidden > 0,
          "architecture: channel and layer counts must be positive");
  require(us_kernel == 4, "architecture: the upsampling path uses 4x4 stride-2 kernels");
}

std::size_t ArchitectureConfig::fgru1_kernel() const {
  return variant == Variant::td || variant == Variant::bu ? 1 : horizontal_kernel;
}

void ArchitectureConfig::write(KeyValueConfig& kv, const std::string& prefix) const {
  kv.set(prefix + "variant", variant_name(variant));
  kv.set(prefix + "task", task_name(task));
  kv.set(prefix + "timesteps", std::to_string(timesteps));
  kv.set(prefix + "image_size", std::to_string(image_size));
  kv.set(prefix + "conv_channels", std::to_string(conv_channels));
  kv.set(prefix + "conv_kernel", std::to_string(conv_kernel));
  kv.set(prefix + "horizontal_kernel", std::to_string(horizontal_kernel));
  kv.set(prefix + "ds_channels1", std::to_string(ds_channels1));
  kv.set(prefix + "ds_channels2", std::to_string(ds_channels2));
  kv.set(prefix + "ds_layers", std::to_string(ds_layers));
  kv.set(prefix + "ds_kernel", std::to_string(ds_kernel));
  kv.set(prefix + "us_kernel", std::to_string(us_kernel));
  kv.set(prefix + "segmentation_hidden", std::to_string(segmentation_hidden));
}

ArchitectureConfig ArchitectureConfig::read(const KeyValueConfig& kv, const std::string& prefix) {
  ArchitectureConfig c;
  c.variant = parse_variant(kv.get_or(prefix + "variant", variant_name(c.variant)));
  c.task = parse_task(kv.get_or(prefix + "task", task_name(c.task)));
  c.timesteps = kv.get_size(prefix + "timesteps", c.timesteps);
  c.image_size = kv.get_size(prefix + "image_size", c.image_size);
  c.conv_channels = kv.get_size(prefix + "conv_channels", c.conv_channels);
  c.conv_kernel = kv.get_size(prefix + "conv_kernel", c.conv_kernel);
  c.horizontal_kernel = kv.get_size(prefix + "horizontal_kernel", c.horizontal_kernel);
  c.ds_channels1 = kv.get_size(prefix + "ds_channels1", c.ds_channels1);
  c.ds_channels2 = kv.get_size(prefix + "ds_channels2", c.ds_channels2);
  c.ds_layers = kv.get_size(prefix + "ds_layers", c.ds_layers);
  c.ds_kernel = kv.get_size(prefix + "ds_kernel", c.ds_kernel);
  c.us_kernel = kv.get_size(prefix + "us_kernel", c.us_kernel);
  c.segmentation_hidden = kv.get_size(prefix + "segmentation_hidden", c.segmentation_hidden);
  c.validate();
  return c;
}

template <std::floating_point T>
std::size_t ModelState<T>::parameter_count() {
  std::size_t n = 0;
  visit_parameters([&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

template <std::floating_point T>
std::vector<std::string> ModelState<T>::parameter_names() {
  std::vector<std::string> names;
  visit_parameters([&](const std::string& name, Tensor<T>&) { names.push_back(name); });
  return names;
}

namespace {

template <std::floating_point T>
ConvLayer<T> make_conv(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  return {fan_in_uniform<T>({cout, cin, k, k}, rng), Tensor<T>({cout})};
}

template <std::floating_point T>
Var<T> conv(const Var<T>& x, ConvLayer<T>& layer, ParamBinder<T>& bind) {
  return conv2d(x, bind(layer.weight), bind(layer.bias));
}

}  // namespace

template <std::floating_point T>
ModelState<T> build_model(const ArchitectureConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t T_eff = cfg.effective_timesteps();
  const std::size_t k1 = cfg.conv_channels;
  ModelState<T> m;
  m.config = cfg;
  m.config.timesteps = T_eff;

  m.conv1 = make_conv<T>(k1, 1, cfg.conv_kernel, rng);
  m.conv2 = make_conv<T>(k1, k1, cfg.conv_kernel, rng);
  m.fgru1 = init_fgru<T>(FGruConfig{k1, cfg.fgru1_kernel(), 1, T_eff, false}, rng);

  m.pool_bn.assign(T_eff, BatchNormParams<T>(k1));
  std::vector<std::size_t> ds_out;
  for (std::size_t stack = 0; stack < 2; ++stack)
    for (std::size_t l = 0; l < cfg.ds_layers; ++l) ds_out.push_back(stack == 0 ? cfg.ds_channels1 : cfg.ds_channels2);
  std::size_t cin = k1;
  std::vector<BatchNormParams<T>> ds_bn_t;
  for (std::size_t c : ds_out) {
    m.ds.push_back(make_conv<T>(c, cin, cfg.ds_kernel, rng));
    ds_bn_t.emplace_back(c);
    cin = c;
  }
  m.ds_bn.assign(T_eff, ds_bn_t);

  m.fgru2 = init_fgru<T>(FGruConfig{cfg.ds_channels2, 1, 1, T_eff, false}, rng);

  const std::size_t us_channels[2][2] = {{cfg.ds_channels2, cfg.ds_channels1}, {cfg.ds_channels1, k1}};
  std::vector<BatchNormParams<T>> us_bn_t;
  for (const auto& [ci, co] : us_channels) {
    // Each output pixel of a stride-2 transpose conv sees ci * (k/2)^2 inputs.
    const double bound = std::sqrt(6.0 / double(ci * cfg.us_kernel * cfg.us_kernel / 4));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ConvLayer<T> layer{Tensor<T>({ci, co, cfg.us_kernel, cfg.us_kernel}), Tensor<T>({co})};
    for (auto& v : layer.weight.values()) v = T(dist(rng));
    m.us.push_back(std::move(layer));
    us_bn_t.emplace_back(co);
  }
  m.us_bn.assign(T_eff, us_bn_t);

  if (cfg.has_topdown()) m.fgru3 = init_fgru<T>(FGruConfig{k1, 1, 1, T_eff, true}, rng);

  m.final_bn = BatchNormParams<T>(k1);
  if (cfg.task == Task::classification) {
    m.readout1 = make_conv<T>(1, k1, 1, rng);
    m.readout2 = make_conv<T>(1, 1, 1, rng);
  } else {
    m.readout1 = make_conv<T>(cfg.segmentation_hidden, k1, 1, rng);
    m.readout2 = make_conv<T>(1, cfg.segmentation_hidden, 1, rng);
  }
  return m;
}

template <std::floating_point T>
Var<T> readout(ModelState<T>& m, ParamBinder<T>& bind, const Var<T>& h1) {
  const Var<T> a = relu(conv(h1, m.readout1, bind));
  return conv(global_max_pool(a), m.readout2, bind);
}

template <std::floating_point T>
Var<T> segmentation_readout(ModelState<T>& m, ParamBinder<T>& bind, const Var<T>& h1) {
  return conv(relu(conv(h1, m.readout1, bind)), m.readout2, bind);
}

template <std::floating_point T>
Var<T> forward(ModelState<T>& m, ParamBinder<T>& bind, const Tensor<T>& images, Mode mode, ForwardTrace<T>* trace) {
  const ArchitectureConfig& cfg = m.config;
  require(images.rank() == 4 && images.dim(1) == 1,
          "forward: expected grayscale images (N, 1, S, S), got " + shape_string(images.shape()));
  require(images.dim(2) == images.dim(3), "forward: images must be square");
  require(images.dim(0) > 0, "forward: empty batch");
  const std::size_t n = images.dim(0), s = images.dim(2);
  require(!cfg.has_topdown() || s % 4 == 0, "forward: image size must be a multiple of 4 for the top-down loop");

  Tape<T>& tape = bind.tape();
  auto bn = [&](const Var<T>& v, BatchNormParams<T>& p) { return apply_batchnorm(v, p, mode, bind); };

  // The image is constant across timesteps, so the conv block is evaluated once.
  const Var<T> x = tape.constant(images);
  const Var<T> drive = conv(relu(conv(x, m.conv1, bind)), m.conv2, bind);

  const std::size_t k1 = cfg.conv_channels;
  Var<T> h1 = tape.constant(Tensor<T>({n, k1, s, s}));
  Var<T> h2 = tape.constant(Tensor<T>({n, cfg.ds_channels2, s / 4, s / 4}));
  if (trace) *trace = ForwardTrace<T>{};

  for (std::size_t t = 0; t < cfg.timesteps; ++t) {
    h1 = fgru_step(drive, h1, m.fgru1, t, mode, bind);
    if (trace) trace->h1_horizontal.push_back(h1.value());
    if (cfg.has_topdown()) {
      Var<T> d = maxpool2(bn(h1, m.pool_bn[t]));
      for (std::size_t l = 0; l < m.ds.size(); ++l) {
        d = bn(relu(conv(d, m.ds[l], bind)), m.ds_bn[t][l]);
        if (l + 1 == cfg.ds_layers) d = maxpool2(d);
      }
      h2 = fgru_step(d, h2, m.fgru2, t, mode, bind);
      Var<T> u = h2;
      for (std::size_t l = 0; l < m.us.size(); ++l)
        u = bn(relu(conv2d_transpose(u, bind(m.us[l].weight), bind(m.us[l].bias), 2, 1)), m.us_bn[t][l]);
      const Var<T> f = fgru_step(u, h1, *m.fgru3, t, mode, bind);
      h1 = topdown_blend(h1, f, bind(*m.fgru3->beta));
    }
    if (trace) {
      trace->h1.push_back(h1.value());
      if (cfg.has_topdown()) trace->h2.push_back(h2.value());
    }
  }

  const Var<T> out = bn(h1, m.final_bn);
  return cfg.task == Task::classification ? readout(m, bind, out) : segmentation_readout(m, bind, out);
}

template <std::floating_point T>
Var<T> loss(const Var<T>& logits, const Tensor<T>& labels) {
  require(logits.value().size() == labels.size(), "loss: " + std::to_string(logits.value().size()) + " logits vs " +
                                                      std::to_string(labels.size()) + " labels");
  return bce_with_logits(logits, labels);
}

template <std::floating_point T>
Tensor<T> predict(ModelState<T>& m, const Tensor<T>& images, ForwardTrace<T>* trace) {
  Tape<T> tape;
  ParamBinder<T> bind(tape, false);
  return forward(m, bind, images, Mode::eval, trace).value();
}

#define PGROUP_INSTANTIATE_ARCH(T)                                                                    \
  template struct ModelState<T>;                                                                      \
  template ModelState<T> build_model(const ArchitectureConfig&, Rng&);                                \
  template Var<T> readout(ModelState<T>&, ParamBinder<T>&, const Var<T>&);                            \
  template Var<T> segmentation_readout(ModelState<T>&, ParamBinder<T>&, const Var<T>&);               \
  template Var<T> forward(ModelState<T>&, ParamBinder<T>&, const Tensor<T>&, Mode, ForwardTrace<T>*); \
  template Var<T> loss(const Var<T>&, const Tensor<T>&);                                              \
  template Tensor<T> predict(ModelState<T>&, const Tensor<T>&, ForwardTrace<T>*);

PGROUP_INSTANTIATE_ARCH(float)
PGROUP_INSTANTIATE_ARCH(double)

}  // namespace pgroup
