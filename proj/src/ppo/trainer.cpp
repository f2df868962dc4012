#include "vvlab/ppo/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "vvlab/autodiff/optim.hpp"
#include "vvlab/autodiff/rng.hpp"
#include "vvlab/error.hpp"

namespace vvlab::ppo {

namespace {

constexpr std::uint64_t kRolloutStream = 0x726f6c6c6f7574ULL;
constexpr std::uint64_t kPromptStream = 0x70726f6d7074ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566666c65ULL;

void check_compatible(const lm::TransformerLM& policy, const lm::TransformerLM& reference,
                      const reward::SentimentClassifier& classifier) {
  if (!(policy.config() == reference.config())) {
    throw ValidationError("ppo: policy and reference architectures differ");
  }
  if (classifier.vocab_size() != policy.config().vocab_size) {
    throw ValidationError("ppo: classifier vocabulary has " +
                          std::to_string(classifier.vocab_size()) + " tokens, policy has " +
                          std::to_string(policy.config().vocab_size));
  }
}

std::vector<std::size_t> pick_prompts(std::size_t pool, std::size_t want, std::uint64_t seed,
                                      std::size_t iteration) {
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  if (pool <= want) return idx;
  Rng rng(derive_seed(seed, kPromptStream, iteration));
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(want);
  return idx;
}

void value_step(ValueHead& head, Adam<float>& opt, std::span<const Rollout* const> samples) {
  std::size_t n = 0;
  for (const Rollout* s : samples) n += s->response.size();
  const std::size_t d = head.dim();
  Tensor features({n, d});
  std::vector<float> targets;
  std::size_t row = 0;
  for (const Rollout* s : samples) {
    std::copy_n(s->features.ptr(), s->features.numel(), features.ptr() + row * d);
    row += s->response.size();
    for (double r : s->returns) targets.push_back(static_cast<float>(r));
  }
  ad::Tape<float> tape;
  std::vector<ad::Var<float>> leaves;
  const auto loss = head.loss(tape, features, targets, leaves);
  if (!std::isfinite(loss.value()[0])) throw DivergenceError("ppo: value loss is not finite");
  tape.backward(loss);
  std::vector<const Tensor*> grads;
  for (const auto& leaf : leaves) grads.push_back(tape.grad(leaf));
  opt.step(grads);
}

}  // namespace

std::string format_metrics_csv(std::span<const IterationMetrics> log) {
  std::ostringstream out;
  out.precision(9);
  out << "iteration,mean_reward,mean_kl,clip_fraction,anchor_distance_mean\n";
  for (const auto& m : log) {
    out << m.iteration << ',' << m.mean_reward << ',' << m.mean_kl << ',' << m.clip_fraction
        << ',' << m.anchor_distance_mean << '\n';
  }
  return out.str();
}

PolicyGradients policy_gradients(const lm::TransformerLM& policy,
                                 std::span<const Rollout* const> samples, const PpoConfig& config,
                                 const AnchorRegularizer* anchor) {
  std::vector<double> old_lp, adv;
  for (const Rollout* s : samples) {
    if (s->advantages.size() != s->response.size() ||
        s->old_log_probs.size() != s->response.size()) {
      throw ShapeError("policy_gradients: sample without advantages or log-probs");
    }
    old_lp.insert(old_lp.end(), s->old_log_probs.begin(), s->old_log_probs.end());
    adv.insert(adv.end(), s->advantages.begin(), s->advantages.end());
  }
  ad::Tape<float> tape;
  const auto bound = lm::bind(tape, policy);
  PolicyGradients out;
  auto loss = clipped_surrogate(response_log_probs(bound, samples), old_lp, adv,
                                config.clip_epsilon, &out.stats);
  if (anchor != nullptr && anchor->coef() > 0.0) loss = ad::add(loss, anchor->penalty(bound));
  out.loss = loss.value()[0];
  if (!std::isfinite(out.loss)) throw DivergenceError("ppo: policy loss is not finite");
  tape.backward(loss);
  for (const Tensor* g : bound.gradients()) out.grads.push_back(g != nullptr ? *g : Tensor());
  return out;
}

std::vector<IterationMetrics> ppo_train(lm::TransformerLM& policy,
                                        const lm::TransformerLM& reference,
                                        const reward::SentimentClassifier& classifier,
                                        std::span<const std::vector<TokenId>> prompts,
                                        const PpoConfig& config, const AnchorRegularizer* anchor,
                                        const TrainOptions& options) {
  config.validate();
  check_compatible(policy, reference, classifier);
  if (prompts.empty()) throw ValidationError("ppo: empty prompt set");
  if (anchor != nullptr && anchor->ids().size() != config.anchor_k) {
    throw ValidationError("ppo: anchor set has " + std::to_string(anchor->ids().size()) +
                          " vectors, config asks for " + std::to_string(config.anchor_k));
  }

  AdamConfig policy_opt_cfg;
  policy_opt_cfg.lr = config.policy_lr;
  Adam<float> policy_opt(policy.parameters(), policy_opt_cfg);
  ValueHead head(policy.config().d_model);
  AdamConfig value_opt_cfg;
  value_opt_cfg.lr = config.value_lr;
  Adam<float> value_opt(head.parameters(), value_opt_cfg);

  std::vector<IterationMetrics> log;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<std::vector<TokenId>> batch_prompts;
    for (std::size_t p : pick_prompts(prompts.size(), config.batch_prompts, config.seed, it)) {
      batch_prompts.push_back(prompts[p]);
    }
    RolloutOptions ro;
    ro.seed = derive_seed(config.seed, kRolloutStream);
    ro.first_stream = it * config.batch_prompts;
    ro.threads = options.threads;
    ro.value_head = &head;
    RolloutBatch batch =
        collect_rollouts(policy, reference, classifier, batch_prompts, config, ro);

    IterationMetrics m;
    m.iteration = it;
    m.mean_reward = batch.mean_score();
    m.mean_kl = batch.mean_kl();
    if (!(m.mean_kl <= config.kl_ceiling)) {
      throw DivergenceError("ppo: iteration " + std::to_string(it) + " mean KL " +
                            std::to_string(m.mean_kl) + " exceeds ceiling " +
                            std::to_string(config.kl_ceiling));
    }
    compute_advantages(batch, config);
    normalize_advantages(batch);

    SurrogateStats stats;
    std::vector<std::size_t> order(batch.samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream, it));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      shuffle_rng.shuffle(order.begin(), order.end());
      for (std::size_t start = 0; start < order.size(); start += config.minibatch_prompts) {
        std::vector<const Rollout*> mb;
        for (std::size_t k = start; k < std::min(order.size(), start + config.minibatch_prompts);
             ++k) {
          mb.push_back(&batch.samples[order[k]]);
        }
        const PolicyGradients pg = policy_gradients(policy, mb, config, anchor);
        if (options.on_step) options.on_step(policy, mb, pg);
        stats.tokens += pg.stats.tokens;
        stats.clipped += pg.stats.clipped;
        std::vector<const Tensor*> grads;
        for (const Tensor& g : pg.grads) grads.push_back(g.empty() ? nullptr : &g);
        policy_opt.step(grads);
        value_step(head, value_opt, mb);
      }
    }
    m.clip_fraction = stats.tokens == 0 ? 0.0
                                        : static_cast<double>(stats.clipped) /
                                              static_cast<double>(stats.tokens);
    m.anchor_distance_mean = anchor != nullptr ? anchor->mean_distance(policy) : 0.0;
    log.push_back(m);
    if (options.on_iteration) options.on_iteration(m, policy);
  }
  return log;
}

}  // namespace vvlab::ppo
