#include "pgroup/checkpoint.hpp"

#include <fstream>

#include "json.hpp"
#include "pgroup/serialize.hpp"

namespace pgroup {

namespace fs = std::filesystem;

template <std::floating_point T>
void save_checkpoint(const fs::path& dir, ModelState<T>& model) {
  fs::create_directories(dir / "tensors");
  KeyValueConfig kv;
  model.config.write(kv, "");
  kv.save(dir / "architecture.txt");

  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["tensors"] = nlohmann::json::array();
  auto store = [&](const char* kind) {
    return [&, kind](const std::string& name, Tensor<T>& t) {
      save_tensor(dir / "tensors" / (name + ".bin"), t);
      manifest["tensors"].push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}});
    };
  };
  model.visit_parameters(store("parameter"));
  model.visit_buffers(store("buffer"));
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(1) << '\n';
}

template <std::floating_point T>
ModelState<T> load_checkpoint(const fs::path& dir) {
  const ArchitectureConfig cfg = ArchitectureConfig::read(KeyValueConfig::load(dir / "architecture.txt"), "");
  Rng rng(0);
  ModelState<T> model = build_model<T>(cfg, rng);
  auto fetch = [&](const std::string& name, Tensor<T>& t) {
    const fs::path path = dir / "tensors" / (name + ".bin");
    if (!fs::exists(path)) throw std::runtime_error("checkpoint " + dir.string() + " lacks tensor " + name);
    Tensor<T> loaded = load_tensor<T>(path);
    if (loaded.shape() != t.shape())
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_string(loaded.shape()) +
                               ", expected " + shape_string(t.shape()));
    t = std::move(loaded);
  };
  model.visit_parameters(fetch);
  model.visit_buffers(fetch);
  return model;
}

template void save_checkpoint(const fs::path&, ModelState<float>&);
template void save_checkpoint(const fs::path&, ModelState<double>&);
template ModelState<float> load_checkpoint(const fs::path&);
template ModelState<double> load_checkpoint(const fs::path&);

}  // namespace pgroup
