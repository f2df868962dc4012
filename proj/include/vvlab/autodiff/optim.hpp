#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vvlab/autodiff/tensor.hpp"

namespace vvlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  BasicTensor<T> m;
  BasicTensor<T> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update of `param` in place.
template <typename T>
void adam_step(BasicTensor<T>& param, const BasicTensor<T>& grad, AdamState<T>& state,
               const AdamConfig& config, double grad_scale = 1.0);

// Euclidean norm of all gradients taken together; nulls are skipped.
template <typename T>
double global_norm(std::span<const BasicTensor<T>* const> grads);

// Adam over a fixed, ordered list of parameters. A null gradient leaves the
// parameter and its moments untouched for that step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<BasicTensor<T>*> params, AdamConfig config);

  // Every gradient is multiplied by grad_scale first (for norm clipping).
  void step(std::span<const BasicTensor<T>* const> grads, double grad_scale = 1.0);
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  std::vector<BasicTensor<T>*> params_;
  std::vector<AdamState<T>> states_;
  AdamConfig config_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace vvlab
