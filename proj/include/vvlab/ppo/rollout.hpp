#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vvlab/lm/forward.hpp"
#include "vvlab/ppo/config.hpp"
#include "vvlab/reward/classifier.hpp"

namespace vvlab::ppo {

using lm::TokenId;

// Linear value estimate over the policy's final-norm state. The features are
// detached from the policy, so the head trains on its own.
class ValueHead {
 public:
  ValueHead() = default;
  explicit ValueHead(std::size_t d_model);

  std::size_t dim() const { return weight_.numel(); }
  // One prediction per row of features [n x d].
  std::vector<double> predict(const Tensor& features) const;
  // Mean squared error against targets on `tape`, differentiable in the head.
  ad::Var<float> loss(ad::Tape<float>& tape, const Tensor& features,
                      std::span<const float> targets, std::vector<ad::Var<float>>& leaves) const;
  std::vector<Tensor*> parameters() { return {&weight_, &bias_}; }

 private:
  Tensor weight_;  // [d x 1]
  Tensor bias_;    // [1]
};

struct Rollout {
  std::vector<TokenId> prompt;    // starts with BOS
  std::vector<TokenId> response;  // generated tokens, EOS kept when drawn
  // One entry per response token.
  std::vector<double> old_log_probs;
  std::vector<double> ref_log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;
  // Final-norm states that predict each response token [T x d].
  Tensor features;
  // Classifier score of the framed-stripped prompt + response.
  double score = 0;

  // Sum over response tokens of old - ref log-probs.
  double kl() const;
};

struct RolloutBatch {
  std::vector<Rollout> samples;

  std::size_t tokens() const;
  double mean_score() const;
  double mean_kl() const;
};

struct RolloutOptions {
  std::uint64_t seed = 0;
  // Prompt p samples from stream first_stream + p.
  std::uint64_t first_stream = 0;
  std::size_t threads = 1;
  // Value predictions are zero without a head.
  const ValueHead* value_head = nullptr;
};

// Samples one response per prompt from the policy and fills log-probs under
// policy and reference, classifier scores and the shaped rewards
//   r_t = -kl_coef * (log pi(a_t) - log ref(a_t)),  plus the score at the last token.
// Throws ValidationError for an empty prompt set, prompts without text or
// prompts that leave no room in the context.
RolloutBatch collect_rollouts(const lm::TransformerLM& policy, const lm::TransformerLM& reference,
                              const reward::SentimentClassifier& classifier,
                              std::span<const std::vector<TokenId>> prompts,
                              const PpoConfig& config, const RolloutOptions& options);

// Log-probs of every response token, samples concatenated in order [n].
// `features`, when given, receives the matching final-norm states [n x d].
ad::Var<float> response_log_probs(const lm::BoundModel<float>& bound,
                                  std::span<const Rollout* const> samples,
                                  ad::Var<float>* features = nullptr);

// GAE over each sample with a zero value after the last token; returns are
// advantages + values. Throws ShapeError when rewards and values disagree in
// length with the response.
void compute_advantages(RolloutBatch& batch, const PpoConfig& config);

// Shifts and scales all advantages in the batch to mean 0, std 1.
void normalize_advantages(RolloutBatch& batch);

}  // namespace vvlab::ppo
