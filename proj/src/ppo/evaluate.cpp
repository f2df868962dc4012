#include "vvlab/ppo/evaluate.hpp"

#include <algorithm>

#include "vvlab/error.hpp"
#include "vvlab/lm/sampling.hpp"

namespace vvlab::ppo {

std::array<std::size_t, kHistogramBuckets> sentiment_histogram(std::span<const double> scores) {
  std::array<std::size_t, kHistogramBuckets> out{};
  for (double s : scores) {
    const double clamped = std::clamp(s, 0.0, 1.0);
    const auto b = std::min(kHistogramBuckets - 1,
                            static_cast<std::size_t>(clamped * kHistogramBuckets));
    ++out[b];
  }
  return out;
}

SentimentEval evaluate_sentiment(const lm::TransformerLM& model,
                                 const reward::SentimentClassifier& classifier,
                                 std::span<const std::vector<lm::TokenId>> prompts,
                                 const EvalOptions& options) {
  if (prompts.empty()) throw ValidationError("evaluate_sentiment: empty prompt set");
  lm::SampleOptions so;
  so.max_new = options.max_new;
  so.seed = options.seed;
  so.intervention = options.intervention;
  const auto responses = lm::sample_batch(model, prompts, so, options.threads);
  SentimentEval out;
  double total = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    std::vector<lm::TokenId> full = prompts[p];
    full.insert(full.end(), responses[p].begin(), responses[p].end());
    const auto text = reward::strip_framing(full);
    if (text.empty()) throw ValidationError("evaluate_sentiment: prompt " + std::to_string(p) +
                                            " produced no text");
    out.scores.push_back(classifier.score(text));
    total += out.scores.back();
  }
  out.mean = total / static_cast<double>(prompts.size());
  out.histogram = sentiment_histogram(out.scores);
  return out;
}

}  // namespace vvlab::ppo
