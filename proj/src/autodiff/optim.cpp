#include "vvlab/autodiff/optim.hpp"

#include <cmath>

#include "vvlab/error.hpp"

namespace vvlab {

template <typename T>
void adam_step(BasicTensor<T>& param, const BasicTensor<T>& grad, AdamState<T>& state,
               const AdamConfig& config, double grad_scale) {
  if (param.shape() != grad.shape()) {
    throw ShapeError("adam_step: parameter " + shape_to_string(param.shape()) +
                     " vs gradient " + shape_to_string(grad.shape()));
  }
  if (state.m.empty()) {
    state.m = BasicTensor<T>::zeros(param.shape());
    state.v = BasicTensor<T>::zeros(param.shape());
  } else if (state.m.shape() != param.shape()) {
    throw ShapeError("adam_step: optimizer state does not match parameter " +
                     shape_to_string(param.shape()));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad_scale * grad[i];
    const double m = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    const double v = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double update = config.lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
    param[i] = static_cast<T>(param[i] - update);
  }
}

template <typename T>
Adam<T>::Adam(std::vector<BasicTensor<T>*> params, AdamConfig config)
    : params_(std::move(params)), states_(params_.size()), config_(config) {}

template <typename T>
void Adam<T>::step(std::span<const BasicTensor<T>* const> grads, double grad_scale) {
  if (grads.size() != params_.size()) {
    throw ShapeError("Adam::step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i] == nullptr) continue;
    adam_step(*params_[i], *grads[i], states_[i], config_, grad_scale);
  }
}

template <typename T>
double global_norm(std::span<const BasicTensor<T>* const> grads) {
  double total = 0.0;
  for (const BasicTensor<T>* g : grads) {
    if (g == nullptr) continue;
    for (T v : g->data()) total += static_cast<double>(v) * v;
  }
  return std::sqrt(total);
}

template void adam_step<float>(BasicTensor<float>&, const BasicTensor<float>&,
                               AdamState<float>&, const AdamConfig&, double);
template void adam_step<double>(BasicTensor<double>&, const BasicTensor<double>&,
                                AdamState<double>&, const AdamConfig&, double);
template double global_norm<float>(std::span<const BasicTensor<float>* const>);
template double global_norm<double>(std::span<const BasicTensor<double>* const>);
template class Adam<float>;
template class Adam<double>;

}  // namespace vvlab
