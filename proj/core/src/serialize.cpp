#include "pgroup/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace pgroup {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic32{'P', 'G', 'T', 'N', 'S', 'R', '3', '2'};
constexpr std::array<char, 8> kMagic64{'P', 'G', 'T', 'N', 'S', 'R', '6', '4'};
constexpr std::uint32_t kMaxRank = 8;

template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw std::runtime_error("truncated tensor file");
  return v;
}

template <class Stored, class T>
std::vector<T> read_values(std::istream& in, std::size_t n) {
  std::vector<Stored> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n * sizeof(Stored)));
  if (!in) throw std::runtime_error("truncated tensor file");
  return std::vector<T>(raw.begin(), raw.end());
}

}  // namespace

template <std::floating_point T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  const auto& magic = sizeof(T) == 4 ? kMagic32 : kMagic64;
  out.write(magic.data(), magic.size());
  put<std::uint32_t>(out, std::uint32_t(t.rank()));
  for (auto d : t.shape()) put<std::uint32_t>(out, std::uint32_t(d));
  out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * sizeof(T)));
  if (!out) throw std::runtime_error("failed writing tensor");
}

template <std::floating_point T>
Tensor<T> read_tensor(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in) throw std::runtime_error("truncated tensor file");
  const bool is32 = magic == kMagic32;
  if (!is32 && magic != kMagic64) throw std::runtime_error("bad tensor file magic");
  const auto rank = get<std::uint32_t>(in);
  if (rank > kMaxRank) throw std::runtime_error("tensor file rank too large");
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint32_t>(in);
  const std::size_t n = shape_size(shape);
  auto values = is32 ? read_values<float, T>(in, n) : read_values<double, T>(in, n);
  return Tensor<T>(std::move(shape), std::move(values));
}

template <std::floating_point T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

template <std::floating_point T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor<T>(in);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace pgroup
