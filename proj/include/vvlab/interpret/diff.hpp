#pragma once

#include <array>
#include <span>
#include <vector>

#include "vvlab/interpret/vectors.hpp"
#include "vvlab/lm/forward.hpp"

namespace vvlab::interpret {

// Counts of cosines: bucket 0 holds values below 0.999, bucket b in 1..10
// holds [0.999 + (b-1) 1e-4, 0.999 + b 1e-4), with 1.0 itself in bucket 10.
struct CosineHistogram {
  static constexpr double kLow = 0.999;
  static constexpr double kWidth = 1e-4;
  static constexpr std::size_t kBuckets = 11;
  std::array<std::size_t, kBuckets> counts{};

  static std::size_t bucket_of(double cosine);
  void add(double cosine) { ++counts[bucket_of(cosine)]; }
  std::size_t total() const;
};

struct VectorCosine {
  lm::ValueVectorId id;
  double value_cosine = 0;
  double key_cosine = 0;
};

struct WeightDiff {
  std::vector<VectorCosine> vectors;  // every (layer, index), row-major
  CosineHistogram value_histogram, key_histogram;

  // Share of value vectors with cosine >= threshold.
  double value_fraction_at_least(double threshold) const;
};

// Throws CheckpointError(kArchitectureMismatch) unless the configs agree.
WeightDiff weight_diff(const lm::TransformerLM& a, const lm::TransformerLM& b);

struct ActivationDelta {
  lm::ValueVectorId id;
  double mean_a = 0;
  double mean_b = 0;
  double delta = 0;  // mean_b - mean_a
};

// Mean coefficient m_i over every prompt position under each model (and its
// optional intervention), in set order. Throws ValidationError when the
// tokenizers differ.
std::vector<ActivationDelta> activation_diff(
    const lm::TransformerLM& model_a, const lm::Tokenizer& tokenizer_a,
    const lm::TransformerLM& model_b, const lm::Tokenizer& tokenizer_b,
    std::span<const std::vector<lm::TokenId>> prompts, std::span<const lm::ValueVectorId> ids,
    const lm::InterventionSpec* spec_a = nullptr, const lm::InterventionSpec* spec_b = nullptr);

}  // namespace vvlab::interpret
