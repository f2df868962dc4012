#include "vvlab/interpret/lens.hpp"

#include <cmath>

#include "vvlab/error.hpp"

namespace vvlab::interpret {

Tensor64 lens_distributions(const lm::TransformerLM& model, std::span<const lm::TokenId> tokens,
                            std::size_t position, const lm::InterventionSpec* intervention) {
  if (position >= tokens.size()) {
    throw IndexError("logit lens: position " + std::to_string(position) + " outside sequence of " +
                     std::to_string(tokens.size()));
  }
  lm::ResidualTrace<float> trace;
  lm::ForwardOptions<float> opts;
  opts.trace = &trace;
  opts.intervention = intervention;
  ad::Tape<float> tape(false);
  const auto bound = lm::bind(tape, model, false);
  const ad::Segment seg{0, tokens.size()};
  lm::residual_stream(bound, tokens, std::span<const ad::Segment>(&seg, 1), opts);

  const std::size_t n_states = trace.layers.size() + 1;
  const std::size_t d = model.config().d_model;
  Tensor states({n_states, d});
  for (std::size_t j = 0; j < d; ++j) states.at(0, j) = trace.layers[0].pre.at(position, j);
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    for (std::size_t j = 0; j < d; ++j) states.at(l + 1, j) = trace.layers[l].post.at(position, j);
  }
  const Tensor logits = lm::unembed(bound, lm::final_norm(bound, tape.constant(states))).value();
  Tensor64 out({n_states, logits.cols()});
  for (std::size_t r = 0; r < n_states; ++r) {
    const auto row = logits.row(r);
    double mx = row[0];
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0;
    for (std::size_t c = 0; c < row.size(); ++c) z += (out.at(r, c) = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < row.size(); ++c) out.at(r, c) /= z;
  }
  return out;
}

LensTrack logit_lens(const lm::TransformerLM& model, std::span<const lm::TokenId> tokens,
                     std::size_t position, lm::TokenId target,
                     const lm::InterventionSpec* intervention) {
  if (target < 0 || static_cast<std::size_t>(target) >= model.config().vocab_size) {
    throw IndexError("logit lens: target token " + std::to_string(target) + " out of range");
  }
  const Tensor64 dist = lens_distributions(model, tokens, position, intervention);
  LensTrack track{target, position, {}};
  for (std::size_t r = 0; r < dist.rows(); ++r) track.probability.push_back(dist.at(r, target));
  return track;
}

}  // namespace vvlab::interpret
