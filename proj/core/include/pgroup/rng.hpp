#pragma once

#include <cstdint>
#include <random>

namespace pgroup {

using Rng = std::mt19937_64;

/// One round of the splitmix64 finaliser.
std::uint64_t splitmix64(std::uint64_t x);

/// Independent stream seed for item `index` under `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

inline Rng make_rng(std::uint64_t master, std::uint64_t index) { return Rng(derive_seed(master, index)); }

double uniform(Rng& rng, double lo, double hi);
double normal(Rng& rng, double mean, double sd);

}  // namespace pgroup
