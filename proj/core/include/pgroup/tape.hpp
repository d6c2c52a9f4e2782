#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "pgroup/tensor.hpp"

namespace pgroup {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape.
template <std::floating_point T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of the leaves of a tape, keyed by leaf id.
template <std::floating_point T>
class Gradients {
 public:
  const Tensor<T>* find(const Var<T>& v) const {
    auto it = grads_.find(v.id());
    return it == grads_.end() ? nullptr : &it->second;
  }
  /// Gradient of `v`; zeros of the right shape when the loss does not depend on it.
  const Tensor<T>& at(const Var<T>& v) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape<T>;
  mutable std::unordered_map<std::size_t, Tensor<T>> grads_;
  std::unordered_map<std::size_t, Shape> shapes_;
};

/// Records primitive applications for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// reverse topological order. A tape belongs to one thread.
template <std::floating_point T>
class Tape {
 public:
  /// Receives the gradient flowing into a node and pushes it to the node's parents.
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// A learnable input; its gradient is returned by backward().
  Var<T> leaf(Tensor<T> value);
  /// Result of a primitive. `fn` is dropped when no parent needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward fn,
                std::string_view op_name);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor<T>& value(const Var<T>& v) const { return nodes_[v.id()].value; }
  bool needs_grad(const Var<T>& v) const { return nodes_[v.id()].needs_grad; }

  /// Adds `g` into the pending gradient of `v`. No-op for constants.
  void accumulate(const Var<T>& v, const Tensor<T>& g);
  /// Pending gradient buffer of `v`, zero-initialised on first access; nullptr for constants.
  Tensor<T>* grad_buffer(const Var<T>& v);

  /// Runs the reverse sweep from a one-element `loss`, returns leaf gradients
  /// and clears the tape.
  Gradients<T> backward(const Var<T>& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  /// Nondifferentiable ops (relu, max pooling) fold their branch pattern into
  /// this signature when tracking is on, so finite-difference checks can tell
  /// when a perturbation crossed a kink.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool track_kinks() const { return track_kinks_; }
  void mix_kink(std::uint64_t h);
  std::uint64_t kink_signature() const { return kink_signature_; }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    Backward backward;
    bool needs_grad = false;
    bool is_leaf = false;
  };

  std::deque<Node> nodes_;
  bool track_kinks_ = false;
  std::uint64_t kink_signature_ = 0x9e3779b97f4a7c15ULL;
};

template <std::floating_point T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace pgroup
