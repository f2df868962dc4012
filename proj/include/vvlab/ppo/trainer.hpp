#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vvlab/ppo/objective.hpp"
#include "vvlab/ppo/rollout.hpp"

namespace vvlab::ppo {

struct IterationMetrics {
  std::size_t iteration = 0;
  double mean_reward = 0;  // mean classifier score of the iteration's rollouts
  double mean_kl = 0;      // mean sequence KL of the rollouts to the reference
  double clip_fraction = 0;
  double anchor_distance_mean = 0;  // after the iteration's updates; 0 without a set
};

// Header "iteration,mean_reward,mean_kl,clip_fraction,anchor_distance_mean".
std::string format_metrics_csv(std::span<const IterationMetrics> log);

struct PolicyGradients {
  double loss = 0;
  // named_parameters() order; empty where no gradient flowed.
  std::vector<Tensor> grads;
  SurrogateStats stats;
};

// Clipped surrogate over the samples' response tokens, plus the anchor term
// when `anchor` has a positive coefficient, with its gradients.
PolicyGradients policy_gradients(const lm::TransformerLM& policy,
                                 std::span<const Rollout* const> samples, const PpoConfig& config,
                                 const AnchorRegularizer* anchor = nullptr);

using IterationHook = std::function<void(const IterationMetrics&, const lm::TransformerLM&)>;

// Called before every policy update with the policy it starts from, the
// minibatch and the gradients about to be applied.
using StepHook = std::function<void(const lm::TransformerLM& policy,
                                    std::span<const Rollout* const> minibatch,
                                    const PolicyGradients& gradients)>;

struct TrainOptions {
  std::size_t threads = 1;
  IterationHook on_iteration;
  StepHook on_step;
};

// Rollouts, advantages, then `epochs` passes of minibatch Adam updates on
// policy and value head, for config.iterations iterations. Prompts are token
// ids starting with BOS. The anchor set, when given, must hold
// config.anchor_k vectors snapshotted from the initial policy. Throws
// ValidationError for incompatible components and DivergenceError when the
// rollout KL exceeds config.kl_ceiling or the loss stops being finite.
std::vector<IterationMetrics> ppo_train(lm::TransformerLM& policy,
                                        const lm::TransformerLM& reference,
                                        const reward::SentimentClassifier& classifier,
                                        std::span<const std::vector<TokenId>> prompts,
                                        const PpoConfig& config,
                                        const AnchorRegularizer* anchor = nullptr,
                                        const TrainOptions& options = {});

}  // namespace vvlab::ppo
