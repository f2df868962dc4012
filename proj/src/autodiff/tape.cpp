#include "vvlab/autodiff/tape.hpp"

#include "vvlab/error.hpp"

namespace vvlab::ad {

template <typename T>
Var<T> Tape<T>::append(Node node) {
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::constant(TensorT value) {
  Node node;
  node.owned = std::move(value);
  return append(std::move(node));
}

template <typename T>
Var<T> Tape<T>::parameter(const TensorT& external, bool requires_grad) {
  Node node;
  node.external = &external;
  node.requires_grad = record_ && requires_grad;
  return append(std::move(node));
}

template <typename T>
Var<T> Tape<T>::variable(TensorT value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = record_;
  return append(std::move(node));
}

template <typename T>
const BasicTensor<T>& Tape<T>::value(Var<T> v) const {
  const Node& node = nodes_.at(v.id);
  return node.external != nullptr ? *node.external : node.owned;
}

template <typename T>
const BasicTensor<T>* Tape<T>::grad(Var<T> v) const {
  const TensorT& g = grads_.at(v.id);
  return g.empty() ? nullptr : &g;
}

template <typename T>
Var<T> Tape<T>::push(TensorT value, std::initializer_list<Var<T>> inputs,
                     BackwardFn fn) {
  Node node;
  node.owned = std::move(value);
  if (record_) {
    for (const Var<T>& in : inputs) {
      if (in.tape != this) throw ContractError("op input belongs to a different tape");
      if (nodes_.at(in.id).requires_grad) node.requires_grad = true;
    }
    if (node.requires_grad) node.backward = std::move(fn);
  }
  return append(std::move(node));
}

template <typename T>
BasicTensor<T>* Tape<T>::grad_buffer(Var<T> v) {
  Node& node = nodes_.at(v.id);
  if (!node.requires_grad) return nullptr;
  TensorT& g = grads_[v.id];
  if (g.empty()) g = TensorT::zeros(value(v).shape());
  return &g;
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, const TensorT& g) {
  TensorT* buf = grad_buffer(v);
  if (buf == nullptr) return;
  if (buf->numel() != g.numel()) {
    throw ShapeError("gradient " + shape_to_string(g.shape()) + " does not match node " +
                     shape_to_string(buf->shape()));
  }
  T* dst = buf->ptr();
  const T* src = g.ptr();
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape != this) throw ContractError("backward root belongs to a different tape");
  const TensorT& root_value = value(root);
  if (root_value.numel() != 1) {
    throw ContractError("backward root must be scalar, got shape " +
                        shape_to_string(root_value.shape()));
  }
  for (TensorT& g : grads_) g = TensorT();
  if (!nodes_.at(root.id).requires_grad) return;
  grads_[root.id] = TensorT::full(root_value.shape(), T(1));
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || grads_[id].empty()) continue;
    node.backward(*this, grads_[id]);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace vvlab::ad
