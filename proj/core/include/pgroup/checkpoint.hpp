#pragma once

#include <filesystem>

#include "pgroup/architecture.hpp"

namespace pgroup {

// A checkpoint directory holds architecture.txt (the ArchitectureConfig as
// key-value text), manifest.json (name, kind and shape of every tensor) and
// one tensor file per parameter or running statistic under tensors/.

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& dir, ModelState<T>& model);

/// Rebuilds the model from the stored config and loads every tensor.
/// Throws if a tensor is missing or its shape disagrees with the config.
template <std::floating_point T>
ModelState<T> load_checkpoint(const std::filesystem::path& dir);

}  // namespace pgroup
