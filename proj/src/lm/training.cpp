#include "vvlab/lm/training.hpp"

#include <cmath>
#include <numeric>

#include "vvlab/autodiff/rng.hpp"
#include "vvlab/error.hpp"

namespace vvlab::lm {

std::vector<std::vector<TokenId>> encode_corpus(const Tokenizer& tokenizer,
                                                std::span<const std::string> lines) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(lines.size());
  for (const std::string& line : lines) {
    std::vector<TokenId> seq = {Tokenizer::kBos};
    for (TokenId id : tokenizer.encode(line)) seq.push_back(id);
    seq.push_back(Tokenizer::kEos);
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::vector<TokenId>> encode_prompts(const Tokenizer& tokenizer,
                                                 std::span<const std::string> lines) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(lines.size());
  for (const std::string& line : lines) {
    std::vector<TokenId> seq = {Tokenizer::kBos};
    for (TokenId id : tokenizer.encode(line)) seq.push_back(id);
    out.push_back(std::move(seq));
  }
  return out;
}

template <typename T>
ad::Var<T> next_token_loss(const BoundModel<T>& bound, const PackedBatch& batch) {
  std::vector<std::int32_t> rows;
  std::vector<std::int32_t> targets;
  for (const ad::Segment& s : batch.segments) {
    for (std::size_t t = 0; t + 1 < s.length; ++t) {
      rows.push_back(static_cast<std::int32_t>(s.start + t));
      targets.push_back(batch.tokens[s.start + t + 1]);
    }
  }
  if (rows.empty()) throw ContractError("next_token_loss: no sequence has two tokens");
  ad::Var<T> x = residual_stream(bound, std::span<const TokenId>(batch.tokens),
                                 std::span<const ad::Segment>(batch.segments));
  ad::Var<T> h = final_norm(bound, ad::gather_rows(x, std::span<const std::int32_t>(rows)));
  return ad::cross_entropy(unembed(bound, h), std::span<const std::int32_t>(targets));
}

double mean_token_nll(const TransformerLM& model, std::span<const std::vector<TokenId>> sequences,
                      std::size_t batch_size) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < sequences.size(); b += batch_size) {
    const auto chunk = sequences.subspan(b, std::min(batch_size, sequences.size() - b));
    const PackedBatch batch = PackedBatch::pack(chunk);
    ad::Tape<float> tape(false);
    const BoundModel<float> bound = bind(tape, model, false);
    std::size_t n = 0;
    for (const auto& s : chunk) n += s.size() - 1;
    total += next_token_loss(bound, batch).value().item() * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw ContractError("mean_token_nll: no predictable tokens");
  return total / static_cast<double>(count);
}

namespace {

double unigram_perplexity(std::span<const std::vector<TokenId>> train,
                          std::span<const std::vector<TokenId>> heldout, std::size_t vocab) {
  std::vector<double> counts(vocab, 1.0);
  double total = static_cast<double>(vocab);
  for (const auto& s : train) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      counts[s[t]] += 1.0;
      total += 1.0;
    }
  }
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& s : heldout) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      nll -= std::log(counts[s[t]] / total);
      ++n;
    }
  }
  return n == 0 ? 0.0 : std::exp(nll / static_cast<double>(n));
}

}  // namespace

LmTrainReport train_lm(TransformerLM& model, std::span<const std::vector<TokenId>> sequences,
                       const LmTrainConfig& config, const EvalHook& on_eval) {
  if (config.batch_size == 0) throw ContractError("train_lm: batch_size must be positive");
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(config.seed, 0x73706c6974ULL));
  split_rng.shuffle(order.begin(), order.end());
  std::size_t n_heldout = static_cast<std::size_t>(
      std::floor(config.heldout_fraction * static_cast<double>(sequences.size())));
  if (config.heldout_fraction > 0 && n_heldout == 0 && sequences.size() > 1) n_heldout = 1;
  std::vector<std::vector<TokenId>> train, heldout;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_heldout ? heldout : train).push_back(sequences[order[i]]);
  }
  if (train.size() < config.batch_size) {
    throw ValidationError("corpus has " + std::to_string(train.size()) +
                          " training sequences, fewer than one batch of " +
                          std::to_string(config.batch_size));
  }

  LmTrainReport report;
  report.train_sequences = train.size();
  report.heldout_sequences = heldout.size();
  report.unigram_perplexity = unigram_perplexity(train, heldout, model.config().vocab_size);
  const auto evaluate = [&](std::size_t step) {
    if (!heldout.empty()) {
      const double ppl = std::exp(mean_token_nll(model, heldout));
      report.evals.push_back({step, ppl});
      report.heldout_perplexity = ppl;
    }
    if (on_eval) on_eval(step, model);
  };

  Adam<float> opt(model.parameters(), AdamConfig{config.lr});
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> perm(train.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(config.seed, 0x65706f6368ULL, epoch));
    rng.shuffle(perm.begin(), perm.end());
    for (std::size_t b = 0; b + config.batch_size <= perm.size(); b += config.batch_size) {
      std::vector<std::vector<TokenId>> seqs;
      for (std::size_t i = b; i < b + config.batch_size; ++i) seqs.push_back(train[perm[i]]);
      const PackedBatch batch = PackedBatch::pack(seqs);
      ad::Tape<float> tape;
      const BoundModel<float> bound = bind(tape, model);
      const ad::Var<float> loss = next_token_loss(bound, batch);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw DivergenceError("train_lm: non-finite loss at step " + std::to_string(step));
      }
      tape.backward(loss);
      const std::vector<const Tensor*> grads = bound.gradients();
      double scale = 1.0;
      if (config.clip_norm > 0) {
        const double norm = global_norm<float>(grads);
        if (norm > config.clip_norm) scale = config.clip_norm / norm;
      }
      opt.step(grads, scale);
      report.loss_curve.push_back(value);
      ++step;
      if (config.eval_interval > 0 && step % config.eval_interval == 0) evaluate(step);
    }
  }
  if (report.evals.empty() || report.evals.back().step != step) evaluate(step);
  return report;
}

template ad::Var<float> next_token_loss(const BoundModel<float>&, const PackedBatch&);
template ad::Var<double> next_token_loss(const BoundModel<double>&, const PackedBatch&);

}  // namespace vvlab::lm
