#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vvlab/autodiff/optim.hpp"
#include "vvlab/lm/forward.hpp"

namespace vvlab::lm {

struct LmTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  // Global gradient norm cap; 0 disables clipping.
  double clip_norm = 1.0;
  double heldout_fraction = 0.1;
  // Heldout evaluation (and the on_eval hook) every this many steps.
  std::size_t eval_interval = 200;
  std::uint64_t seed = 1;
};

struct LmTrainReport {
  std::vector<double> loss_curve;  // training loss per step
  struct Eval {
    std::size_t step = 0;
    double heldout_perplexity = 0;
  };
  std::vector<Eval> evals;
  double heldout_perplexity = 0;
  // Add-one unigram model fitted on the training split, scored on heldout.
  double unigram_perplexity = 0;
  std::size_t train_sequences = 0;
  std::size_t heldout_sequences = 0;
};

// [BOS] tokens [EOS] for every line.
std::vector<std::vector<TokenId>> encode_corpus(const Tokenizer& tokenizer,
                                                std::span<const std::string> lines);

// [BOS] tokens, left open for continuation.
std::vector<std::vector<TokenId>> encode_prompts(const Tokenizer& tokenizer,
                                                 std::span<const std::string> lines);

// Mean next-token cross-entropy (nats) of `model` on the sequences.
double mean_token_nll(const TransformerLM& model, std::span<const std::vector<TokenId>> sequences,
                      std::size_t batch_size = 64);

// Next-token loss of one packed batch on a recording tape.
template <typename T>
ad::Var<T> next_token_loss(const BoundModel<T>& bound, const PackedBatch& batch);

using EvalHook = std::function<void(std::size_t step, const TransformerLM& model)>;

// Adam on next-token cross-entropy. The sequences are split into train and
// heldout by a seeded shuffle; the hook runs at every eval interval and once
// at the end. Throws ValidationError when there is less than one batch of
// training data and DivergenceError on a non-finite loss.
LmTrainReport train_lm(TransformerLM& model, std::span<const std::vector<TokenId>> sequences,
                       const LmTrainConfig& config, const EvalHook& on_eval = {});

}  // namespace vvlab::lm
