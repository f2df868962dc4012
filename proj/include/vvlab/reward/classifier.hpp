#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vvlab/autodiff/tape.hpp"
#include "vvlab/io/checkpoint.hpp"
#include "vvlab/io/corpus.hpp"
#include "vvlab/lm/tokenizer.hpp"

namespace vvlab::reward {

using lm::TokenId;

// sigmoid(w . mean_t E[tokens_t] + b). Mean pooling makes the score blind to
// token order.
class SentimentClassifier {
 public:
  SentimentClassifier() = default;
  SentimentClassifier(std::size_t vocab_size, std::size_t dim);
  static SentimentClassifier initialized(std::size_t vocab_size, std::size_t dim,
                                         std::uint64_t seed);

  std::size_t vocab_size() const { return embedding_.empty() ? 0 : embedding_.shape()[0]; }
  std::size_t dim() const { return weight_.numel(); }

  // Probability of positive sentiment. Throws ContractError when empty and
  // IndexError for ids outside the vocabulary.
  double score(std::span<const TokenId> tokens) const;
  std::vector<double> score_batch(std::span<const std::vector<TokenId>> sequences) const;

  // Logits [n] for a batch on `tape`, differentiable in the classifier weights.
  ad::Var<float> logits(ad::Tape<float>& tape, std::span<const std::vector<TokenId>> sequences,
                        std::vector<ad::Var<float>>* leaves = nullptr) const;

  std::vector<Tensor*> parameters() { return {&embedding_, &weight_, &bias_}; }

  io::Checkpoint to_checkpoint(const lm::Tokenizer& tokenizer) const;
  // Validates kind and shapes; the embedded tokenizer hash is returned through
  // `tokenizer_hash` for cross-checks against the policy.
  static SentimentClassifier from_checkpoint(const io::Checkpoint& ckpt,
                                             std::string* tokenizer_hash = nullptr);

 private:
  Tensor embedding_;  // [V x dim]
  Tensor weight_;     // [dim x 1]
  Tensor bias_;       // [1]
};

struct ClassifierTrainConfig {
  std::size_t dim = 16;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 0.02;
  double heldout_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct ClassifierReport {
  std::vector<double> loss_curve;
  double train_accuracy = 0;
  double heldout_accuracy = 0;
};

// Logistic loss with Adam. Throws ValidationError when only one label occurs.
SentimentClassifier train_classifier(std::span<const io::LabeledSentence> corpus,
                                     const lm::Tokenizer& tokenizer,
                                     const ClassifierTrainConfig& config,
                                     ClassifierReport* report = nullptr);

// Drops BOS, EOS and PAD, the framing the policy adds around text.
std::vector<TokenId> strip_framing(std::span<const TokenId> tokens);

}  // namespace vvlab::reward
