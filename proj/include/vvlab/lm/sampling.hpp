#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vvlab/lm/forward.hpp"

namespace vvlab::lm {

struct SampleOptions {
  std::size_t max_new = 16;
  double temperature = 1.0;
  // Argmax decoding; temperature is ignored.
  bool greedy = false;
  std::uint64_t seed = 0;
  // Prompt p samples from stream derive_seed(seed, first_stream + p).
  std::uint64_t first_stream = 0;
  const InterventionSpec* intervention = nullptr;
};

// Continues `prompt` token by token until EOS (kept in the output), max_new
// tokens, or the context limit. Throws ContractError for temperature <= 0
// without greedy.
std::vector<TokenId> sample(const TransformerLM& model, std::span<const TokenId> prompt,
                            const SampleOptions& options);

// One continuation per prompt, each from its own random stream. Kernels
// compute rows independently, so entry p equals sample() on prompt p with
// first_stream advanced by p.
// `threads` splits prompts across workers without changing the output.
std::vector<std::vector<TokenId>> sample_batch(const TransformerLM& model,
                                               std::span<const std::vector<TokenId>> prompts,
                                               const SampleOptions& options,
                                               std::size_t threads = 1);

}  // namespace vvlab::lm
