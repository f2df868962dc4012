#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "vvlab/autodiff/tensor.hpp"

namespace vvlab::ad {

template <typename T>
class Tape;

// Handle to one node of a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Eager, append-only computation graph. Node ids are assigned in creation
// order, so inputs always precede outputs and backward can walk the ids in
// reverse. A tape built with record=false keeps values only; no backward
// closures are stored and every node is treated as a constant.
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(Tape&, const TensorT& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(TensorT value);
  // Non-owning leaf over a tensor that must outlive the tape.
  Var<T> parameter(const TensorT& external, bool requires_grad = true);
  // Owned leaf that requires grad.
  Var<T> variable(TensorT value);

  const TensorT& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward root with respect to v; null when no
  // gradient reached v.
  const TensorT* grad(Var<T> v) const;

  // Seeds d(root)/d(root) = 1 and propagates through every node with id <=
  // root, in strictly decreasing id order. Gradients from a previous call are
  // discarded first, so repeated calls give identical results.
  void backward(Var<T> root);

  // Op authoring: appends a node whose gradient flows to `inputs` via `fn`.
  Var<T> push(TensorT value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  // Adds g into the gradient of v; ignored when v does not require grad.
  void accumulate(Var<T> v, const TensorT& g);
  // Zero-initialized gradient buffer of v, or null when v does not require grad.
  TensorT* grad_buffer(Var<T> v);

 private:
  struct Node {
    const TensorT* external = nullptr;
    TensorT owned;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> append(Node node);

  bool record_;
  std::deque<Node> nodes_;
  std::vector<TensorT> grads_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace vvlab::ad
