#include "vvlab/lm/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "vvlab/autodiff/rng.hpp"
#include "vvlab/error.hpp"

namespace vvlab::lm {

namespace {

TokenId draw(std::span<const float> logits, const SampleOptions& options, Rng& rng) {
  if (options.greedy) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> weights(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    weights[i] = std::exp((logits[i] - mx) / options.temperature);
  }
  return static_cast<TokenId>(rng.categorical(weights));
}

// Samples prompts [begin, end) together; seeds come from the global index.
void sample_range(const TransformerLM& model, std::span<const std::vector<TokenId>> prompts,
                  const SampleOptions& options, std::size_t begin, std::size_t end,
                  std::vector<std::vector<TokenId>>& out) {
  std::vector<Rng> rngs;
  std::vector<std::vector<TokenId>> seqs;
  std::vector<std::size_t> active;
  for (std::size_t p = begin; p < end; ++p) {
    if (prompts[p].empty()) throw ContractError("sample: empty prompt");
    rngs.emplace_back(derive_seed(options.seed, options.first_stream + p));
    seqs.push_back(prompts[p]);
    if (options.max_new > 0 && prompts[p].size() < model.config().max_seq) {
      active.push_back(p - begin);
    }
  }
  ForwardOptions<float> fwd;
  fwd.intervention = options.intervention;
  for (std::size_t step = 0; step < options.max_new && !active.empty(); ++step) {
    std::vector<std::vector<TokenId>> batch;
    for (std::size_t a : active) batch.push_back(seqs[a]);
    const PackedBatch packed = PackedBatch::pack(batch);
    const std::vector<std::int32_t> rows = packed.last_rows();
    const Tensor logits = forward_rows(model, packed, rows, fwd);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t a = active[k];
      const TokenId next = draw(logits.row(k), options, rngs[a]);
      seqs[a].push_back(next);
      const std::size_t generated = seqs[a].size() - prompts[begin + a].size();
      if (next != Tokenizer::kEos && generated < options.max_new &&
          seqs[a].size() < model.config().max_seq) {
        still.push_back(a);
      }
    }
    active = std::move(still);
  }
  for (std::size_t p = begin; p < end; ++p) {
    const auto& s = seqs[p - begin];
    out[p].assign(s.begin() + static_cast<std::ptrdiff_t>(prompts[p].size()), s.end());
  }
}

void check_options(const SampleOptions& options) {
  if (!options.greedy && !(options.temperature > 0.0)) {
    throw ContractError("sampling temperature must be positive (use greedy for argmax)");
  }
}

}  // namespace

std::vector<TokenId> sample(const TransformerLM& model, std::span<const TokenId> prompt,
                            const SampleOptions& options) {
  check_options(options);
  std::vector<std::vector<TokenId>> one = {{prompt.begin(), prompt.end()}};
  std::vector<std::vector<TokenId>> out(1);
  sample_range(model, one, options, 0, 1, out);
  return out[0];
}

std::vector<std::vector<TokenId>> sample_batch(const TransformerLM& model,
                                               std::span<const std::vector<TokenId>> prompts,
                                               const SampleOptions& options,
                                               std::size_t threads) {
  check_options(options);
  std::vector<std::vector<TokenId>> out(prompts.size());
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(prompts.size(), 1));
  if (threads == 1) {
    sample_range(model, prompts, options, 0, prompts.size(), out);
    return out;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (prompts.size() + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    const std::size_t b = w * chunk, e = std::min(prompts.size(), b + chunk);
    if (b >= e) break;
    workers.emplace_back([&, w, b, e] {
      try {
        sample_range(model, prompts, options, b, e, out);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace vvlab::lm
