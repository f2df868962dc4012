#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "vvlab/autodiff/optim.hpp"
#include "vvlab/error.hpp"
#include "vvlab/ppo/evaluate.hpp"
#include "vvlab/ppo/trainer.hpp"

namespace vvlab::ppo {
namespace {

using vvlab::testing::random_model;
using vvlab::testing::tiny_config;

constexpr std::size_t kVocab = 12;

std::vector<std::vector<TokenId>> tiny_prompts(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<TokenId>> out;
  for (std::size_t p = 0; p < n; ++p) {
    std::vector<TokenId> seq = {lm::Tokenizer::kBos};
    const std::size_t len = 1 + rng.below(3);
    for (std::size_t t = 0; t < len; ++t) seq.push_back(static_cast<TokenId>(4 + rng.below(kVocab - 4)));
    out.push_back(std::move(seq));
  }
  return out;
}

PpoConfig tiny_ppo() {
  PpoConfig c;
  c.max_new = 4;
  c.batch_prompts = 8;
  c.minibatch_prompts = 4;
  c.epochs = 2;
  c.iterations = 2;
  c.anchor_k = 3;
  return c;
}

bool same_weights(lm::TransformerLM& a, lm::TransformerLM& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!pa[i].second->identical(*pb[i].second)) return false;
  }
  return true;
}

std::vector<const Rollout*> pointers(const RolloutBatch& batch) {
  std::vector<const Rollout*> out;
  for (const auto& s : batch.samples) out.push_back(&s);
  return out;
}

// ----------------------------------------------------------------------- config

TEST(PpoConfig, DefaultsAreValidAndRoundTrip) {
  PpoConfig c;
  EXPECT_NO_THROW(c.validate());
  c.anchor_coef = 1e-4;
  c.gae_lambda = 0.9;
  c.seed = 77;
  const auto back = PpoConfig::from_kv(io::KeyValueConfig::parse(c.to_kv().format()));
  EXPECT_EQ(back.anchor_coef, 1e-4);
  EXPECT_EQ(back.gae_lambda, 0.9);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.to_kv().format(), c.to_kv().format());
}

TEST(PpoConfig, RejectsOutOfRangeAndUnknownKeys) {
  const auto parse = [](const char* text) { return PpoConfig::from_kv(io::KeyValueConfig::parse(text)); };
  EXPECT_THROW(parse("clip_epsilon = 1.0"), ValidationError);
  EXPECT_THROW(parse("clip_epsilon = 0"), ValidationError);
  EXPECT_THROW(parse("gamma = 0"), ValidationError);
  EXPECT_THROW(parse("gamma = 1.01"), ValidationError);
  EXPECT_THROW(parse("gae_lambda = -0.1"), ValidationError);
  EXPECT_THROW(parse("anchor_coef = -1e-4"), ValidationError);
  EXPECT_THROW(parse("epochs = -2"), ValidationError);
  EXPECT_THROW(parse("learning_rate = 0.1"), ValidationError);
  EXPECT_NO_THROW(parse("gamma = 1\ngae_lambda = 0\nanchor_coef = 0"));
}

// -------------------------------------------------------------------- surrogate

double surrogate_loss(std::span<const double> new_lp, std::span<const double> old_lp,
                      std::span<const double> adv, double eps, SurrogateStats* stats = nullptr) {
  ad::Tape<double> tape(false);
  const auto v = tape.constant(Tensor64::vector({new_lp.begin(), new_lp.end()}));
  return clipped_surrogate(v, old_lp, adv, eps, stats).value()[0];
}

TEST(Surrogate, RatioOneGivesMinusMeanAdvantage) {
  const std::vector<double> lp = {-1.0, -2.5, -0.3};
  const std::vector<double> adv = {0.5, -1.5, 2.0};
  SurrogateStats stats;
  EXPECT_NEAR(surrogate_loss(lp, lp, adv, 0.2, &stats), -(0.5 - 1.5 + 2.0) / 3.0, 1e-15);
  EXPECT_EQ(stats.tokens, 3u);
  EXPECT_EQ(stats.clipped, 0u);
}

TEST(Surrogate, PositiveAdvantageIsClippedAboveOnePlusEpsilon) {
  const double eps = 0.2, a = 1.7;
  const std::vector<double> old_lp = {-1.0};
  const std::vector<double> new_lp = {-1.0 + std::log(1.0 + 2.0 * eps)};
  const std::vector<double> adv = {a};
  SurrogateStats stats;
  EXPECT_NEAR(surrogate_loss(new_lp, old_lp, adv, eps, &stats), -(1.0 + eps) * a, 1e-12);
  EXPECT_EQ(stats.clipped, 1u);
}

// Independent evaluation of min(rho A, clip(rho, 1-eps, 1+eps) A).
double objective_by_cases(double rho, double a, double eps) {
  double clipped = rho;
  if (rho < 1.0 - eps) clipped = 1.0 - eps;
  if (rho > 1.0 + eps) clipped = 1.0 + eps;
  const double x = rho * a, y = clipped * a;
  return x < y ? x : y;
}

TEST(Surrogate, MatchesScalarFormulaOnRandomCases) {
  Rng rng(2024);
  for (int c = 0; c < 1000; ++c) {
    const double rho = std::exp(2.0 * rng.normal() * 0.5);
    const double a = 3.0 * rng.normal();
    const double eps = 0.01 + 0.98 * rng.uniform();
    const std::vector<double> old_lp = {-2.0};
    const std::vector<double> new_lp = {-2.0 + std::log(rho)};
    const std::vector<double> adv = {a};
    const double rho_seen = std::exp(new_lp[0] - old_lp[0]);
    EXPECT_NEAR(-surrogate_loss(new_lp, old_lp, adv, eps), objective_by_cases(rho_seen, a, eps),
                1e-7)
        << "rho " << rho << " A " << a << " eps " << eps;
  }
}

TEST(Surrogate, GradientMatchesFiniteDifferencesAwayFromKinks) {
  Rng rng(7);
  int clipped_zero = 0;
  for (int c = 0; c < 300; ++c) {
    const double eps = 0.1 + 0.3 * rng.uniform();
    const double rho = std::exp(0.6 * rng.normal());
    if (std::abs(rho - (1 - eps)) < 1e-3 || std::abs(rho - (1 + eps)) < 1e-3) continue;
    const double a = rng.normal();
    const std::vector<double> old_lp = {-1.5};
    const std::vector<double> adv = {a};
    ad::Tape<double> tape;
    const auto x = tape.variable(Tensor64::vector({-1.5 + std::log(rho)}));
    tape.backward(clipped_surrogate(x, old_lp, adv, eps));
    const double analytic = tape.grad(x) != nullptr ? (*tape.grad(x))[0] : 0.0;
    const double h = 1e-6;
    const std::vector<double> up = {-1.5 + std::log(rho) + h};
    const std::vector<double> down = {-1.5 + std::log(rho) - h};
    const double fd = (surrogate_loss(up, old_lp, adv, eps) - surrogate_loss(down, old_lp, adv, eps)) / (2 * h);
    EXPECT_NEAR(analytic, fd, 1e-6);
    const bool clip_selected = (a > 0 && rho > 1 + eps) || (a < 0 && rho < 1 - eps);
    if (clip_selected) {
      EXPECT_EQ(analytic, 0.0);
      ++clipped_zero;
    }
  }
  EXPECT_GT(clipped_zero, 20);
}

TEST(Surrogate, NonFiniteRatioAborts) {
  const std::vector<double> new_lp = {std::nan("")};
  const std::vector<double> old_lp = {-1.0};
  const std::vector<double> adv = {1.0};
  EXPECT_THROW(surrogate_loss(new_lp, old_lp, adv, 0.2), DivergenceError);
  EXPECT_THROW(surrogate_loss(new_lp, std::vector<double>{}, adv, 0.2), ShapeError);
}

// ------------------------------------------------------------------------ anchor

TEST(Anchor, ZeroAtSnapshotAndCapped) {
  auto m = random_model<float>(tiny_config(kVocab), 1);
  const std::vector<lm::ValueVectorId> ids = {{0, 3}, {1, 5}, {1, 9}};
  const double cap = 1.0, coef = 1e-4;
  const auto reg = AnchorRegularizer::snapshot(m, ids, coef, cap);
  EXPECT_EQ(reg.penalty(m), 0.0);
  EXPECT_EQ(reg.mean_distance(m), 0.0);

  // Move one vector by cap / 2 along the first axis.
  m.block(1).values.at(5, 0) += static_cast<float>(cap / 2);
  const float moved = m.block(1).values.at(5, 0);
  const double dist = std::abs(double(moved) - (double(moved) - cap / 2));
  EXPECT_NEAR(reg.penalty(m), -coef * cap / 2, 1e-10);
  EXPECT_NEAR(reg.distances(m)[1], dist, 1e-6);
  ad::Tape<float> tape(false);
  EXPECT_NEAR(reg.penalty(lm::bind(tape, m, false)).value()[0], -coef * cap / 2, 1e-9);

  // Beyond the cap the contribution saturates.
  m.block(0).values.at(3, 2) += 5.0f;
  EXPECT_NEAR(reg.penalty(m), -coef * (cap / 2 + cap), 1e-9);
  EXPECT_NEAR(reg.distances(m)[0], 5.0, 1e-5);
}

TEST(Anchor, RejectsBadSets) {
  const auto m = random_model<float>(tiny_config(kVocab), 2);
  EXPECT_THROW(AnchorRegularizer::snapshot(m, {{2, 0}}, 1e-4, 1.0), IndexError);
  EXPECT_THROW(AnchorRegularizer::snapshot(m, {{0, 32}}, 1e-4, 1.0), IndexError);
  EXPECT_THROW(AnchorRegularizer::snapshot(m, {{0, 1}, {0, 1}}, 1e-4, 1.0), ContractError);
  const auto reg = AnchorRegularizer::snapshot(m, {{1, 31}}, 1e-4, 1.0);
  const auto shallow = random_model<float>(tiny_config(kVocab, 1), 2);
  EXPECT_THROW(reg.distances(shallow), IndexError);
}

// --------------------------------------------------------------------- rollouts

struct RolloutFixture {
  lm::TransformerLM policy = random_model<float>(tiny_config(kVocab), 11);
  lm::TransformerLM reference = random_model<float>(tiny_config(kVocab), 12);
  reward::SentimentClassifier clf = reward::SentimentClassifier::initialized(kVocab, 6, 13);
  std::vector<std::vector<TokenId>> prompts = tiny_prompts(64, 14);
};

TEST(Rollouts, IdenticalPolicyAndReferenceHaveNoPenalty) {
  RolloutFixture f;
  PpoConfig cfg = tiny_ppo();
  cfg.kl_coef = 0.7;
  RolloutOptions ro;
  ro.seed = 5;
  const auto batch = collect_rollouts(f.policy, f.policy, f.clf, f.prompts, cfg, ro);
  for (const auto& s : batch.samples) {
    ASSERT_FALSE(s.response.empty());
    for (std::size_t t = 0; t + 1 < s.rewards.size(); ++t) EXPECT_EQ(s.rewards[t], 0.0);
    EXPECT_EQ(s.rewards.back(), s.score);
    EXPECT_EQ(s.kl(), 0.0);
  }
  EXPECT_EQ(batch.mean_kl(), 0.0);
}

TEST(Rollouts, ZeroKlCoefficientRewardsOnlyTheLastTokenWithTheDirectScore) {
  RolloutFixture f;
  PpoConfig cfg = tiny_ppo();
  cfg.kl_coef = 0.0;
  RolloutOptions ro;
  ro.seed = 6;
  const auto batch = collect_rollouts(f.policy, f.reference, f.clf, f.prompts, cfg, ro);
  double direct = 0.0;
  for (const auto& s : batch.samples) {
    for (std::size_t t = 0; t + 1 < s.rewards.size(); ++t) EXPECT_EQ(s.rewards[t], 0.0);
    std::vector<TokenId> text;
    for (TokenId id : s.prompt) if (id > lm::Tokenizer::kEos) text.push_back(id);
    for (TokenId id : s.response) if (id > lm::Tokenizer::kEos) text.push_back(id);
    const double score = f.clf.score(text);
    EXPECT_EQ(s.rewards.back(), score);
    direct += score;
  }
  EXPECT_EQ(batch.mean_score(), direct / 64.0);
}

TEST(Rollouts, LogProbsMatchSingleSequenceForward) {
  RolloutFixture f;
  PpoConfig cfg = tiny_ppo();
  RolloutOptions ro;
  ro.seed = 7;
  const auto batch = collect_rollouts(f.policy, f.reference, f.clf, f.prompts, cfg, ro);
  for (const auto& s : batch.samples) {
    std::vector<TokenId> full = s.prompt;
    full.insert(full.end(), s.response.begin(), s.response.end());
    const Tensor pl = lm::forward(f.policy, full);
    const Tensor rl = lm::forward(f.reference, full);
    for (std::size_t t = 0; t < s.response.size(); ++t) {
      const std::size_t row = s.prompt.size() - 1 + t;
      const auto log_softmax = [&](const Tensor& logits) {
        const auto r = logits.row(row);
        double mx = r[0], z = 0;
        for (float v : r) mx = std::max(mx, double(v));
        for (float v : r) z += std::exp(v - mx);
        return double(r[s.response[t]]) - mx - std::log(z);
      };
      EXPECT_NEAR(s.old_log_probs[t], log_softmax(pl), 1e-5);
      EXPECT_NEAR(s.ref_log_probs[t], log_softmax(rl), 1e-5);
    }
  }
}

TEST(Rollouts, KlShapingSign) {
  RolloutFixture f;
  PpoConfig cfg = tiny_ppo();
  cfg.kl_coef = 0.3;
  RolloutOptions ro;
  ro.seed = 8;
  const auto batch = collect_rollouts(f.policy, f.reference, f.clf, f.prompts, cfg, ro);
  std::size_t above = 0, below = 0;
  for (const auto& s : batch.samples) {
    for (std::size_t t = 0; t < s.response.size(); ++t) {
      const double shaped = s.rewards[t] - (t + 1 == s.response.size() ? s.score : 0.0);
      if (s.old_log_probs[t] > s.ref_log_probs[t]) {
        EXPECT_LT(shaped, 0.0);
        ++above;
      } else if (s.old_log_probs[t] < s.ref_log_probs[t]) {
        EXPECT_GT(shaped, 0.0);
        ++below;
      }
    }
  }
  EXPECT_GT(above, 0u);
  EXPECT_GT(below, 0u);
}

TEST(Rollouts, DeterministicAndThreadIndependent) {
  RolloutFixture f;
  PpoConfig cfg = tiny_ppo();
  RolloutOptions ro;
  ro.seed = 9;
  const auto a = collect_rollouts(f.policy, f.reference, f.clf, f.prompts, cfg, ro);
  ro.threads = 3;
  const auto b = collect_rollouts(f.policy, f.reference, f.clf, f.prompts, cfg, ro);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].response, b.samples[i].response);
    EXPECT_EQ(a.samples[i].rewards, b.samples[i].rewards);
    EXPECT_EQ(a.samples[i].old_log_probs, b.samples[i].old_log_probs);
  }
}

TEST(Rollouts, RejectsEmptyOrOversizedPrompts) {
  RolloutFixture f;
  const PpoConfig cfg = tiny_ppo();
  EXPECT_THROW(collect_rollouts(f.policy, f.reference, f.clf, {}, cfg, {}), ValidationError);
  const std::vector<std::vector<TokenId>> framing_only = {{lm::Tokenizer::kBos}};
  EXPECT_THROW(collect_rollouts(f.policy, f.reference, f.clf, framing_only, cfg, {}),
               ValidationError);
  const std::vector<std::vector<TokenId>> full = {{1, 4, 5, 6, 7, 8, 9, 10}};
  EXPECT_THROW(collect_rollouts(f.policy, f.reference, f.clf, full, cfg, {}), ValidationError);
}

// -------------------------------------------------------------------- advantages

Rollout synthetic(std::vector<double> rewards, std::vector<double> values) {
  Rollout r;
  r.response.assign(rewards.size(), 5);
  r.rewards = std::move(rewards);
  r.values = std::move(values);
  return r;
}

TEST(Advantages, UndiscountedWithZeroValuesAreRewardSuffixSums) {
  PpoConfig cfg;
  cfg.gamma = 1.0;
  cfg.gae_lambda = 1.0;
  RolloutBatch batch;
  batch.samples.push_back(synthetic({0.5, -1.0, 2.0, 0.25}, {0, 0, 0, 0}));
  compute_advantages(batch, cfg);
  const std::vector<double> want = {1.75, 1.25, 2.25, 0.25};
  EXPECT_EQ(batch.samples[0].advantages, want);
  EXPECT_EQ(batch.samples[0].returns, want);
}

TEST(Advantages, PerfectValuesGiveZeroAdvantage) {
  PpoConfig cfg;
  RolloutBatch batch;
  // gamma 1, constant reward c: V_t = (T - t) c.
  batch.samples.push_back(synthetic({0.3, 0.3, 0.3}, {0.9, 0.6, 0.3}));
  compute_advantages(batch, cfg);
  for (double a : batch.samples[0].advantages) EXPECT_NEAR(a, 0.0, 1e-12);
}

TEST(Advantages, MatchBruteForceSums) {
  Rng rng(31);
  for (int c = 0; c < 50; ++c) {
    PpoConfig cfg;
    cfg.gamma = 0.5 + 0.5 * rng.uniform();
    cfg.gae_lambda = rng.uniform();
    RolloutBatch batch;
    for (int s = 0; s < 3; ++s) {
      const std::size_t n = 1 + rng.below(7);
      std::vector<double> r(n), v(n);
      for (std::size_t t = 0; t < n; ++t) {
        r[t] = rng.normal();
        v[t] = rng.normal();
      }
      batch.samples.push_back(synthetic(r, v));
    }
    compute_advantages(batch, cfg);
    for (const auto& s : batch.samples) {
      const std::size_t n = s.rewards.size();
      for (std::size_t t = 0; t < n; ++t) {
        // A_t = sum_l (gamma lambda)^l delta_{t+l}.
        double want = 0.0;
        for (std::size_t k = t; k < n; ++k) {
          const double next = k + 1 < n ? s.values[k + 1] : 0.0;
          const double delta = s.rewards[k] + cfg.gamma * next - s.values[k];
          want += std::pow(cfg.gamma * cfg.gae_lambda, double(k - t)) * delta;
        }
        EXPECT_NEAR(s.advantages[t], want, 1e-12);
        EXPECT_NEAR(s.returns[t], want + s.values[t], 1e-12);
      }
    }
  }
}

TEST(Advantages, LengthMismatchAndNormalization) {
  PpoConfig cfg;
  RolloutBatch bad;
  bad.samples.push_back(synthetic({1.0, 2.0}, {0.0}));
  EXPECT_THROW(compute_advantages(bad, cfg), ShapeError);

  RolloutBatch batch;
  batch.samples.push_back(synthetic({1.0, -2.0, 0.5}, {0.1, 0.2, 0.3}));
  batch.samples.push_back(synthetic({3.0}, {1.0}));
  compute_advantages(batch, cfg);
  normalize_advantages(batch);
  double sum = 0, sq = 0;
  for (const auto& s : batch.samples) {
    for (double a : s.advantages) {
      sum += a;
      sq += a * a;
    }
  }
  EXPECT_NEAR(sum / 4, 0.0, 1e-12);
  EXPECT_NEAR(sq / 4, 1.0, 1e-6);
}

// ------------------------------------------------------------------ gradients

RolloutBatch batch_with_advantages(RolloutFixture& f, std::uint64_t seed) {
  PpoConfig cfg = tiny_ppo();
  RolloutOptions ro;
  ro.seed = seed;
  auto batch = collect_rollouts(f.policy, f.reference, f.clf, f.prompts, cfg, ro);
  Rng rng(seed);
  for (auto& s : batch.samples) {
    s.advantages.resize(s.response.size());
    for (double& a : s.advantages) a = rng.normal();
  }
  return batch;
}

std::vector<double> flatten(const std::vector<Tensor>& grads) {
  std::vector<double> out;
  for (const auto& g : grads) out.insert(out.end(), g.data().begin(), g.data().end());
  return out;
}

double cosine_of(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

// -mean over response tokens of A_t log pi(a_t), built one sequence at a time.
std::vector<Tensor> vanilla_policy_gradient(const lm::TransformerLM& policy,
                                            const RolloutBatch& batch) {
  ad::Tape<float> tape;
  const auto bound = lm::bind(tape, policy);
  std::size_t n_tokens = batch.tokens();
  ad::Var<float> total{};
  bool first = true;
  for (const auto& s : batch.samples) {
    std::vector<TokenId> seq = s.prompt;
    seq.insert(seq.end(), s.response.begin(), s.response.end() - 1);
    const std::vector<ad::Segment> seg = {{0, seq.size()}};
    const auto logits = lm::unembed(bound, lm::final_norm(bound, lm::residual_stream(bound, seq, seg)));
    std::vector<std::int32_t> targets(seq.begin() + 1, seq.end());
    targets.push_back(s.response.back());
    std::vector<float> weights(seq.size(), 0.f);
    for (std::size_t t = 0; t < s.response.size(); ++t) {
      weights[s.prompt.size() - 1 + t] = static_cast<float>(-s.advantages[t] / double(n_tokens));
    }
    const auto lp = ad::token_log_probs(logits, targets);
    const auto part = ad::sum(ad::mul(lp, tape.constant(Tensor::vector(weights))));
    total = first ? part : ad::add(total, part);
    first = false;
  }
  tape.backward(total);
  std::vector<Tensor> out;
  for (const Tensor* g : bound.gradients()) out.push_back(*g);
  return out;
}

TEST(PolicyGradient, UnboundedClipMatchesVanillaPolicyGradient) {
  RolloutFixture f;
  const auto batch = batch_with_advantages(f, 21);
  PpoConfig cfg = tiny_ppo();
  cfg.clip_epsilon = 1e9;
  const auto ppo = policy_gradients(f.policy, pointers(batch), cfg);
  const auto vanilla = vanilla_policy_gradient(f.policy, batch);
  EXPECT_GE(cosine_of(flatten(ppo.grads), flatten(vanilla)), 0.99);

  // One Adam step from each gradient moves the parameters the same way.
  auto step_delta = [&](const std::vector<Tensor>& grads) {
    auto copy = f.policy;
    Adam<float> opt(copy.parameters(), AdamConfig{1e-3});
    std::vector<const Tensor*> ptrs;
    for (const auto& g : grads) ptrs.push_back(&g);
    opt.step(ptrs);
    std::vector<double> delta;
    auto after = copy.named_parameters();
    auto before = f.policy.named_parameters();
    for (std::size_t i = 0; i < after.size(); ++i) {
      for (std::size_t k = 0; k < after[i].second->numel(); ++k) {
        delta.push_back(double((*after[i].second)[k]) - (*before[i].second)[k]);
      }
    }
    return delta;
  };
  EXPECT_GE(cosine_of(step_delta(ppo.grads), step_delta(vanilla)), 0.99);
}

TEST(PolicyGradient, AnchorTermOnlyTouchesItsVectors) {
  RolloutFixture f;
  const auto batch = batch_with_advantages(f, 22);
  const std::vector<lm::ValueVectorId> ids = {{0, 4}, {1, 2}, {1, 30}};
  const auto reg = AnchorRegularizer::snapshot(f.policy, ids, 0.5, 10.0);
  // Move the set away from the snapshot so the term has a gradient.
  for (const auto& id : ids) {
    for (float& v : f.policy.block(id.layer).values.row(id.index)) v += 0.1f;
  }
  PpoConfig cfg = tiny_ppo();
  const auto plain = policy_gradients(f.policy, pointers(batch), cfg);
  const auto anchored = policy_gradients(f.policy, pointers(batch), cfg, &reg);
  const auto names = f.policy.named_parameters();
  std::size_t differing_rows = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& name = names[i].first;
    const Tensor& a = plain.grads[i];
    const Tensor& b = anchored.grads[i];
    const bool is_values = name.size() > 10 && name.substr(name.size() - 10) == "mlp.values";
    if (!is_values) {
      ASSERT_TRUE(a.identical(b)) << name;
      continue;
    }
    const std::size_t layer = std::stoul(name.substr(7));
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const bool in_set = std::find(ids.begin(), ids.end(), lm::ValueVectorId{layer, r}) != ids.end();
      const bool equal = std::equal(a.row(r).begin(), a.row(r).end(), b.row(r).begin(),
                                    [](float x, float y) { return std::memcmp(&x, &y, sizeof x) == 0; });
      if (in_set) {
        differing_rows += equal ? 0 : 1;
      } else {
        EXPECT_TRUE(equal) << name << " row " << r;
      }
    }
  }
  EXPECT_EQ(differing_rows, ids.size());
}

// -------------------------------------------------------------------- training

TEST(PpoTrain, ZeroIterationsLeaveThePolicyUnchanged) {
  RolloutFixture f;
  auto policy = f.policy;
  PpoConfig cfg = tiny_ppo();
  cfg.iterations = 0;
  EXPECT_TRUE(ppo_train(policy, f.reference, f.clf, f.prompts, cfg).empty());
  EXPECT_TRUE(same_weights(policy, f.policy));
}

TEST(PpoTrain, ReferenceUnchangedAndRunsAreDeterministic) {
  RolloutFixture f;
  const auto reference_before = f.reference;
  const PpoConfig cfg = tiny_ppo();
  auto a = f.reference;
  auto b = f.reference;
  const auto log_a = ppo_train(a, f.reference, f.clf, f.prompts, cfg);
  TrainOptions two_threads;
  two_threads.threads = 2;
  const auto log_b = ppo_train(b, f.reference, f.clf, f.prompts, cfg, nullptr, two_threads);
  auto ref_copy = reference_before;
  EXPECT_TRUE(same_weights(f.reference, ref_copy));
  EXPECT_TRUE(same_weights(a, b));
  EXPECT_FALSE(same_weights(a, ref_copy));
  EXPECT_EQ(format_metrics_csv(log_a), format_metrics_csv(log_b));
  ASSERT_EQ(log_a.size(), 2u);
  EXPECT_EQ(log_a[0].mean_kl, 0.0);
  EXPECT_NE(log_a[1].mean_kl, 0.0);
}

TEST(PpoTrain, MetricsCsvAndHook) {
  RolloutFixture f;
  PpoConfig cfg = tiny_ppo();
  cfg.anchor_coef = 1e-3;
  auto policy = f.reference;
  const auto reg = AnchorRegularizer::snapshot(policy, {{0, 1}, {0, 2}, {1, 3}}, cfg.anchor_coef,
                                               cfg.anchor_cap);
  std::size_t calls = 0;
  TrainOptions opts;
  opts.on_iteration = [&](const IterationMetrics& m, const lm::TransformerLM&) {
    EXPECT_EQ(m.iteration, calls++);
  };
  const auto log = ppo_train(policy, f.reference, f.clf, f.prompts, cfg, &reg, opts);
  EXPECT_EQ(calls, 2u);
  EXPECT_GT(log.back().anchor_distance_mean, 0.0);
  const std::string csv = format_metrics_csv(log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "iteration,mean_reward,mean_kl,clip_fraction,anchor_distance_mean");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(PpoTrain, Errors) {
  RolloutFixture f;
  PpoConfig cfg = tiny_ppo();
  auto policy = f.policy;
  // The reference differs from the policy, so the first KL is far above a tiny ceiling.
  cfg.kl_ceiling = 1e-6;
  EXPECT_THROW(ppo_train(policy, f.reference, f.clf, f.prompts, cfg), DivergenceError);
  cfg = tiny_ppo();
  const auto reg = AnchorRegularizer::snapshot(policy, {{0, 1}}, 1e-4, 1.0);
  EXPECT_THROW(ppo_train(policy, f.reference, f.clf, f.prompts, cfg, &reg), ValidationError);
  const auto other = reward::SentimentClassifier::initialized(kVocab + 1, 6, 1);
  EXPECT_THROW(ppo_train(policy, f.reference, other, f.prompts, cfg), ValidationError);
  const auto deeper = random_model<float>(tiny_config(kVocab, 3), 1);
  EXPECT_THROW(ppo_train(policy, deeper, f.clf, f.prompts, cfg), ValidationError);
}

// ------------------------------------------------------------------- evaluation

TEST(EvaluateSentiment, ConstantClassifierAndDeterminism) {
  RolloutFixture f;
  const reward::SentimentClassifier half(kVocab, 4);
  EvalOptions opts;
  opts.max_new = 4;
  opts.seed = 3;
  const auto flat = evaluate_sentiment(f.policy, half, f.prompts, opts);
  EXPECT_EQ(flat.mean, 0.5);
  EXPECT_EQ(flat.histogram[10], 64u);

  const auto a = evaluate_sentiment(f.policy, f.clf, f.prompts, opts);
  opts.threads = 4;
  const auto b = evaluate_sentiment(f.policy, f.clf, f.prompts, opts);
  EXPECT_EQ(a.scores, b.scores);
  std::size_t total = 0;
  for (auto c : a.histogram) total += c;
  EXPECT_EQ(total, 64u);
  EXPECT_THROW(evaluate_sentiment(f.policy, f.clf, {}, opts), ValidationError);
}

TEST(EvaluateSentiment, HistogramEdges) {
  const std::vector<double> scores = {0.0, 0.049, 0.05, 0.5, 0.999, 1.0};
  const auto h = sentiment_histogram(scores);
  EXPECT_EQ(h[0], 2u);
  EXPECT_EQ(h[1], 1u);
  EXPECT_EQ(h[10], 1u);
  EXPECT_EQ(h[19], 2u);
}

}  // namespace
}  // namespace vvlab::ppo
