#pragma once

#include <span>
#include <vector>

#include "vvlab/lm/forward.hpp"

namespace vvlab::interpret {

struct LensTrack {
  lm::TokenId target = 0;
  std::size_t position = 0;
  // Entry 0 after the embeddings, entry l+1 after block l.
  std::vector<double> probability;
};

// softmax(U . final_norm(x)) at every layer boundary for one position
// [(L + 1) x V], in double.
Tensor64 lens_distributions(const lm::TransformerLM& model, std::span<const lm::TokenId> tokens,
                            std::size_t position,
                            const lm::InterventionSpec* intervention = nullptr);

// Throws IndexError for a position or target out of range.
LensTrack logit_lens(const lm::TransformerLM& model, std::span<const lm::TokenId> tokens,
                     std::size_t position, lm::TokenId target,
                     const lm::InterventionSpec* intervention = nullptr);

}  // namespace vvlab::interpret
