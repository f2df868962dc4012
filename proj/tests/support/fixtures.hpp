#pragma once

#include <cstdint>

#include "vvlab/autodiff/rng.hpp"
#include "vvlab/lm/forward.hpp"

namespace vvlab::testing {

inline lm::ModelConfig tiny_config(std::size_t vocab = 12, std::size_t layers = 2) {
  lm::ModelConfig c;
  c.vocab_size = vocab;
  c.n_layers = layers;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_mlp = 32;
  c.max_seq = 8;
  return c;
}

// Every parameter drawn from Normal(0, scale), norm gains around one, so
// all paths carry signal.
template <typename T>
lm::BasicTransformerLM<T> random_model(const lm::ModelConfig& config, std::uint64_t seed,
                                       double scale = 0.5) {
  lm::BasicTransformerLM<T> m(config);
  Rng rng(seed);
  for (auto& [name, t] : m.named_parameters()) {
    const bool gain = name.find("gain") != std::string::npos;
    for (T& v : t->data()) v = static_cast<T>((gain ? 1.0 : 0.0) + scale * rng.normal());
  }
  return m;
}

inline std::vector<lm::TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<lm::TokenId> out(n);
  for (auto& t : out) t = static_cast<lm::TokenId>(rng.below(vocab));
  return out;
}

}  // namespace vvlab::testing
