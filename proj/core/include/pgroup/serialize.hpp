#pragma once

#include <filesystem>
#include <iosfwd>

#include "pgroup/tensor.hpp"

namespace pgroup {

// Binary tensor file: 8-byte magic ("PGTNSR32" or "PGTNSR64"), u32 rank,
// rank x u32 dims, then the values, all little-endian.

template <std::floating_point T>
void write_tensor(std::ostream& out, const Tensor<T>& t);

/// Reads either precision, converting to T.
template <std::floating_point T>
Tensor<T> read_tensor(std::istream& in);

template <std::floating_point T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);

template <std::floating_point T>
Tensor<T> load_tensor(const std::filesystem::path& path);

}  // namespace pgroup
