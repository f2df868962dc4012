#include "vvlab/ppo/rollout.hpp"

#include <cmath>
#include <numeric>

#include "vvlab/error.hpp"
#include "vvlab/lm/sampling.hpp"

namespace vvlab::ppo {

ValueHead::ValueHead(std::size_t d_model) : weight_({d_model, 1}), bias_({1}) {}

std::vector<double> ValueHead::predict(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != dim()) {
    throw ShapeError("ValueHead: features " + shape_to_string(features.shape()) +
                     " for a head of width " + std::to_string(dim()));
  }
  std::vector<double> out(features.rows(), bias_[0]);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto row = features.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) out[r] += double(row[j]) * weight_[j];
  }
  return out;
}

ad::Var<float> ValueHead::loss(ad::Tape<float>& tape, const Tensor& features,
                               std::span<const float> targets,
                               std::vector<ad::Var<float>>& leaves) const {
  const auto w = tape.parameter(weight_);
  const auto b = tape.parameter(bias_);
  leaves = {w, b};
  const auto x = tape.constant(features);
  auto pred = ad::add_bias(ad::matmul(x, w), b);
  pred = ad::reshape(pred, {features.rows()});
  return ad::mse(pred, targets);
}

double Rollout::kl() const {
  double total = 0.0;
  for (std::size_t t = 0; t < old_log_probs.size(); ++t) total += old_log_probs[t] - ref_log_probs[t];
  return total;
}

std::size_t RolloutBatch::tokens() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.response.size();
  return n;
}

double RolloutBatch::mean_score() const {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += s.score;
  return total / static_cast<double>(samples.size());
}

double RolloutBatch::mean_kl() const {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += s.kl();
  return total / static_cast<double>(samples.size());
}

ad::Var<float> response_log_probs(const lm::BoundModel<float>& bound,
                                  std::span<const Rollout* const> samples,
                                  ad::Var<float>* features) {
  if (samples.empty()) throw ContractError("response_log_probs: no samples");
  // Sequence i is prompt + response without its last token; the response
  // tokens are predicted by the rows from the last prompt token onward.
  std::vector<std::vector<TokenId>> seqs;
  std::vector<std::int32_t> targets;
  for (const Rollout* s : samples) {
    if (s->response.empty()) throw ContractError("response_log_probs: empty response");
    std::vector<TokenId> seq = s->prompt;
    seq.insert(seq.end(), s->response.begin(), s->response.end() - 1);
    seqs.push_back(std::move(seq));
    targets.insert(targets.end(), s->response.begin(), s->response.end());
  }
  const lm::PackedBatch packed = lm::PackedBatch::pack(seqs);
  std::vector<std::int32_t> rows;
  rows.reserve(targets.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ad::Segment seg = packed.segments[i];
    const std::size_t first = seg.start + samples[i]->prompt.size() - 1;
    for (std::size_t t = 0; t < samples[i]->response.size(); ++t) {
      rows.push_back(static_cast<std::int32_t>(first + t));
    }
  }
  const auto resid = lm::residual_stream(bound, packed.tokens, packed.segments);
  const auto states = ad::gather_rows(lm::final_norm(bound, resid), rows);
  if (features != nullptr) *features = states;
  return ad::token_log_probs(lm::unembed(bound, states), targets);
}

namespace {

void check_finite(std::span<const float> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DivergenceError(std::string(what) + ": non-finite log-prob at token " +
                            std::to_string(i));
    }
  }
}

}  // namespace

RolloutBatch collect_rollouts(const lm::TransformerLM& policy, const lm::TransformerLM& reference,
                              const reward::SentimentClassifier& classifier,
                              std::span<const std::vector<TokenId>> prompts,
                              const PpoConfig& config, const RolloutOptions& options) {
  if (prompts.empty()) throw ValidationError("collect_rollouts: empty prompt set");
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    if (reward::strip_framing(prompts[p]).empty()) {
      throw ValidationError("collect_rollouts: prompt " + std::to_string(p) + " has no text");
    }
    if (prompts[p].size() >= policy.config().max_seq) {
      throw ValidationError("collect_rollouts: prompt " + std::to_string(p) +
                            " leaves no room in a context of " +
                            std::to_string(policy.config().max_seq));
    }
  }

  lm::SampleOptions so;
  so.max_new = config.max_new;
  so.seed = options.seed;
  so.first_stream = options.first_stream;
  const auto responses = lm::sample_batch(policy, prompts, so, options.threads);

  RolloutBatch batch;
  batch.samples.resize(prompts.size());
  std::vector<const Rollout*> ptrs;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    Rollout& r = batch.samples[p];
    r.prompt = prompts[p];
    r.response = responses[p];
    ptrs.push_back(&r);
  }

  ad::Tape<float> policy_tape(false);
  const auto bp = lm::bind(policy_tape, policy, false);
  ad::Var<float> feats;
  const Tensor& old_lp = response_log_probs(bp, ptrs, &feats).value();
  check_finite(old_lp.data(), "policy");
  ad::Tape<float> ref_tape(false);
  const auto br = lm::bind(ref_tape, reference, false);
  const Tensor& ref_lp = response_log_probs(br, ptrs).value();
  check_finite(ref_lp.data(), "reference");

  const Tensor& all_features = feats.value();
  const std::size_t d = all_features.cols();
  std::size_t offset = 0;
  for (Rollout& r : batch.samples) {
    const std::size_t n = r.response.size();
    r.features = Tensor({n, d});
    std::copy_n(all_features.ptr() + offset * d, n * d, r.features.ptr());
    r.old_log_probs.assign(old_lp.ptr() + offset, old_lp.ptr() + offset + n);
    r.ref_log_probs.assign(ref_lp.ptr() + offset, ref_lp.ptr() + offset + n);
    offset += n;

    std::vector<TokenId> full = r.prompt;
    full.insert(full.end(), r.response.begin(), r.response.end());
    r.score = classifier.score(reward::strip_framing(full));

    r.rewards.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      r.rewards[t] = -config.kl_coef * (r.old_log_probs[t] - r.ref_log_probs[t]);
    }
    r.rewards.back() += r.score;
    r.values = options.value_head != nullptr ? options.value_head->predict(r.features)
                                             : std::vector<double>(n, 0.0);
  }
  return batch;
}

void compute_advantages(RolloutBatch& batch, const PpoConfig& config) {
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    Rollout& r = batch.samples[i];
    const std::size_t n = r.response.size();
    if (r.rewards.size() != n || r.values.size() != n) {
      throw ShapeError("compute_advantages: sample " + std::to_string(i) + " has " +
                       std::to_string(n) + " tokens, " + std::to_string(r.rewards.size()) +
                       " rewards and " + std::to_string(r.values.size()) + " values");
    }
    r.advantages.assign(n, 0.0);
    r.returns.assign(n, 0.0);
    double next_value = 0.0, running = 0.0;
    for (std::size_t k = n; k-- > 0;) {
      const double delta = r.rewards[k] + config.gamma * next_value - r.values[k];
      running = delta + config.gamma * config.gae_lambda * running;
      r.advantages[k] = running;
      r.returns[k] = running + r.values[k];
      next_value = r.values[k];
    }
  }
}

void normalize_advantages(RolloutBatch& batch) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& r : batch.samples) {
    for (double a : r.advantages) {
      sum += a;
      ++n;
    }
  }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  for (const auto& r : batch.samples) {
    for (double a : r.advantages) sq += (a - mean) * (a - mean);
  }
  const double sd = std::sqrt(sq / static_cast<double>(n));
  for (auto& r : batch.samples) {
    for (double& a : r.advantages) a = (a - mean) / (sd + 1e-8);
  }
}

}  // namespace vvlab::ppo
