#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vvlab/lm/model.hpp"
#include "vvlab/reward/classifier.hpp"

namespace vvlab::ppo {

inline constexpr std::size_t kHistogramBuckets = 20;

struct SentimentEval {
  std::vector<double> scores;  // one per prompt
  double mean = 0;
  // Equal-width buckets over [0, 1]; a score of 1 falls in the last one.
  std::array<std::size_t, kHistogramBuckets> histogram{};
};

struct EvalOptions {
  std::size_t max_new = 12;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  const lm::InterventionSpec* intervention = nullptr;
};

std::array<std::size_t, kHistogramBuckets> sentiment_histogram(std::span<const double> scores);

// Samples one continuation per prompt and scores the framed-stripped prompt +
// continuation. Throws ValidationError for an empty prompt set.
SentimentEval evaluate_sentiment(const lm::TransformerLM& model,
                                 const reward::SentimentClassifier& classifier,
                                 std::span<const std::vector<lm::TokenId>> prompts,
                                 const EvalOptions& options);

}  // namespace vvlab::ppo
