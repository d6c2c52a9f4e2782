#include "pgroup/tape.hpp"

#include <string>

namespace pgroup {

template <std::floating_point T>
const Tensor<T>& Gradients<T>::at(const Var<T>& v) const {
  auto it = grads_.find(v.id());
  if (it != grads_.end()) return it->second;
  auto s = shapes_.find(v.id());
  require(s != shapes_.end(), "no gradient recorded for this variable");
  // Leaf unreachable from the loss: materialise zeros on demand.
  return grads_.emplace(v.id(), Tensor<T>(s->second)).first->second;
}

template <std::floating_point T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, {}, false, false});
  return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, {}, true, true});
  return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward fn,
                       std::string_view op_name) {
  check_finite(value, op_name);
  bool needs = false;
  for (const auto& p : parents) {
    require(p.tape() == this, std::string(op_name) + ": operand recorded on a different tape");
    needs = needs || nodes_[p.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), std::nullopt, needs ? std::move(fn) : Backward{}, needs, false});
  return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Tensor<T>* Tape<T>::grad_buffer(const Var<T>& v) {
  Node& node = nodes_[v.id()];
  if (!node.needs_grad) return nullptr;
  if (!node.grad) node.grad.emplace(node.value.shape());
  return &*node.grad;
}

template <std::floating_point T>
void Tape<T>::accumulate(const Var<T>& v, const Tensor<T>& g) {
  Tensor<T>* buf = grad_buffer(v);
  if (!buf) return;
  require(buf->shape() == g.shape(), "gradient shape " + shape_string(g.shape()) + " does not match value " +
                                         shape_string(buf->shape()));
  T* dst = buf->data();
  const T* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <std::floating_point T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) {
  require(loss.tape() == this, "backward: loss belongs to another tape");
  require(value(loss).size() == 1, "backward: loss must be a scalar, got shape " + shape_string(value(loss).shape()));
  Gradients<T> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf) out.shapes_.emplace(i, nodes_[i].value.shape());
  }
  if (nodes_[loss.id()].needs_grad) {
    nodes_[loss.id()].grad.emplace(value(loss).shape(), T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.grad) continue;
      if (node.is_leaf) {
        out.grads_.emplace(i, std::move(*node.grad));
        node.grad.reset();
        continue;
      }
      if (node.backward) {
        Tensor<T> g = std::move(*node.grad);
        node.grad.reset();
        node.backward(*this, g);
        node.backward = nullptr;
      }
    }
  }
  clear();
  return out;
}

template <std::floating_point T>
void Tape<T>::clear() {
  nodes_.clear();
  kink_signature_ = 0x9e3779b97f4a7c15ULL;
}

template <std::floating_point T>
void Tape<T>::mix_kink(std::uint64_t h) {
  kink_signature_ ^= h + 0x9e3779b97f4a7c15ULL + (kink_signature_ << 6) + (kink_signature_ >> 2);
}

template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;

}  // namespace pgroup
