#include "vvlab/interpret/diff.hpp"

#include <cmath>

#include "vvlab/error.hpp"
#include "vvlab/io/checkpoint.hpp"

namespace vvlab::interpret {

std::size_t CosineHistogram::bucket_of(double cosine) {
  if (cosine < kLow) return 0;
  // The small guard keeps decimal edges such as 0.9998 in their own bucket.
  const auto b = static_cast<std::size_t>(std::floor((cosine - kLow) / kWidth + 1e-7));
  return std::min<std::size_t>(b + 1, kBuckets - 1);
}

std::size_t CosineHistogram::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

double WeightDiff::value_fraction_at_least(double threshold) const {
  if (vectors.empty()) return 0.0;
  std::size_t n = 0;
  for (const VectorCosine& v : vectors) n += v.value_cosine >= threshold;
  return static_cast<double>(n) / static_cast<double>(vectors.size());
}

namespace {

// Cosine with both-zero vectors counted as unchanged.
double change_cosine(std::span<const float> a, std::span<const float> b) {
  bool a_zero = true, b_zero = true;
  for (float v : a) a_zero &= v == 0.f;
  for (float v : b) b_zero &= v == 0.f;
  if (a_zero && b_zero) return 1.0;
  return cosine(a, b);
}

}  // namespace

WeightDiff weight_diff(const lm::TransformerLM& a, const lm::TransformerLM& b) {
  if (!(a.config() == b.config())) {
    throw io::CheckpointError(io::CheckpointErrc::kArchitectureMismatch,
                              "weight_diff: architectures differ");
  }
  WeightDiff out;
  for (std::size_t l = 0; l < a.config().n_layers; ++l) {
    for (std::size_t i = 0; i < a.config().d_mlp; ++i) {
      VectorCosine v{{l, i},
                     change_cosine(a.block(l).values.row(i), b.block(l).values.row(i)),
                     change_cosine(a.block(l).keys.row(i), b.block(l).keys.row(i))};
      out.value_histogram.add(v.value_cosine);
      out.key_histogram.add(v.key_cosine);
      out.vectors.push_back(v);
    }
  }
  return out;
}

namespace {

std::vector<double> mean_coefficients(const lm::TransformerLM& model,
                                      std::span<const std::vector<lm::TokenId>> prompts,
                                      std::span<const lm::ValueVectorId> ids,
                                      const lm::InterventionSpec* spec) {
  std::vector<double> sum(ids.size(), 0.0);
  std::size_t positions = 0;
  for (const auto& id : ids) model.value_vector(id);
  for (std::size_t b = 0; b < prompts.size(); b += 64) {
    const auto chunk = prompts.subspan(b, std::min<std::size_t>(64, prompts.size() - b));
    const lm::PackedBatch batch = lm::PackedBatch::pack(chunk);
    lm::ResidualTrace<float> trace;
    lm::ForwardOptions<float> opts;
    opts.trace = &trace;
    opts.intervention = spec;
    ad::Tape<float> tape(false);
    const auto bound = lm::bind(tape, model, false);
    lm::residual_stream(bound, std::span<const lm::TokenId>(batch.tokens),
                        std::span<const ad::Segment>(batch.segments), opts);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Tensor& m = trace.layers[ids[k].layer].coefficients;
      for (std::size_t r = 0; r < m.rows(); ++r) sum[k] += m.at(r, ids[k].index);
    }
    positions += batch.tokens.size();
  }
  if (positions == 0) throw ContractError("activation_diff: no prompts");
  for (double& s : sum) s /= static_cast<double>(positions);
  return sum;
}

}  // namespace

std::vector<ActivationDelta> activation_diff(
    const lm::TransformerLM& model_a, const lm::Tokenizer& tokenizer_a,
    const lm::TransformerLM& model_b, const lm::Tokenizer& tokenizer_b,
    std::span<const std::vector<lm::TokenId>> prompts, std::span<const lm::ValueVectorId> ids,
    const lm::InterventionSpec* spec_a, const lm::InterventionSpec* spec_b) {
  if (tokenizer_a.hash() != tokenizer_b.hash()) {
    throw ValidationError("activation_diff: tokenizer mismatch (" + tokenizer_a.hash() + " vs " +
                          tokenizer_b.hash() + ")");
  }
  const auto ma = mean_coefficients(model_a, prompts, ids, spec_a);
  const auto mb = mean_coefficients(model_b, prompts, ids, spec_b);
  std::vector<ActivationDelta> out;
  for (std::size_t k = 0; k < ids.size(); ++k) out.push_back({ids[k], ma[k], mb[k], mb[k] - ma[k]});
  return out;
}

}  // namespace vvlab::interpret
