#include "pgroup/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pgroup {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  require(shape_size(shape_) == data_.size(),
          "tensor shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

template <std::floating_point T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  require(axis < shape_.size(), "axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

template <std::floating_point T>
T Tensor<T>::item() const {
  require(data_.size() == 1, "item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

template <std::floating_point T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <std::floating_point T>
void check_finite(const Tensor<T>& t, std::string_view where) {
  if (!t.all_finite()) throw NumericError("non-finite value produced by " + std::string(where));
}

template <std::floating_point T>
double inner_product(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "inner_product shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

template <std::floating_point T>
double l2_norm(const Tensor<T>& t) {
  double s = 0;
  for (T v : t.values()) s += double(v) * double(v);
  return std::sqrt(s);
}

template <std::floating_point T>
double max_abs(const Tensor<T>& t) {
  double m = 0;
  for (T v : t.values()) m = std::max(m, std::abs(double(v)));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template void check_finite(const Tensor<float>&, std::string_view);
template void check_finite(const Tensor<double>&, std::string_view);
template double inner_product(const Tensor<float>&, const Tensor<float>&);
template double inner_product(const Tensor<double>&, const Tensor<double>&);
template double l2_norm(const Tensor<float>&);
template double l2_norm(const Tensor<double>&);
template double max_abs(const Tensor<float>&);
template double max_abs(const Tensor<double>&);

}  // namespace pgroup
