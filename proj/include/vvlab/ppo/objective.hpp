#pragma once

#include <span>
#include <vector>

#include "vvlab/lm/forward.hpp"

namespace vvlab::ppo {

struct SurrogateStats {
  std::size_t tokens = 0;
  // Tokens whose ratio lies outside [1 - eps, 1 + eps].
  std::size_t clipped = 0;
};

// Loss form of the clipped objective:
//   -mean_i min(rho_i A_i, clip(rho_i, 1 - eps, 1 + eps) A_i),  rho_i = exp(new_i - old_i).
// The gradient is zero on tokens where the clipped branch is selected. Throws
// DivergenceError naming the token when a ratio is not finite.
template <typename T>
ad::Var<T> clipped_surrogate(ad::Var<T> new_log_probs, std::span<const double> old_log_probs,
                             std::span<const double> advantages, double epsilon,
                             SurrogateStats* stats = nullptr);

// Rewards moving the selected value vectors away from a snapshot:
//   loss = -coef * sum_{id in N} min(|v_id - v_id_original|, cap).
class AnchorRegularizer {
 public:
  AnchorRegularizer() = default;
  // Copies the current vectors. Throws IndexError for ids outside the model
  // and ContractError for repeated ids.
  static AnchorRegularizer snapshot(const lm::TransformerLM& model,
                                    std::vector<lm::ValueVectorId> ids, double coef, double cap);

  const std::vector<lm::ValueVectorId>& ids() const { return ids_; }
  double coef() const { return coef_; }
  double cap() const { return cap_; }

  // Uncapped L2 distance of each vector from its snapshot, in id order.
  std::vector<double> distances(const lm::TransformerLM& model) const;
  double mean_distance(const lm::TransformerLM& model) const;
  double penalty(const lm::TransformerLM& model) const;
  // The same loss on a bound model; gradient flows only into rows in N.
  ad::Var<float> penalty(const lm::BoundModel<float>& bound) const;

 private:
  void check(const lm::ModelConfig& config) const;

  std::vector<lm::ValueVectorId> ids_;
  std::vector<std::vector<float>> original_;
  double coef_ = 0.0;
  double cap_ = 1.0;
};

}  // namespace vvlab::ppo
