#include "vvlab/ppo/config.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <string_view>

#include "vvlab/error.hpp"

namespace vvlab::ppo {

namespace {

constexpr std::array<std::string_view, 16> kKeys = {
    "clip_epsilon", "kl_coef",           "gamma",     "gae_lambda", "epochs",
    "batch_prompts", "minibatch_prompts", "policy_lr", "value_lr",   "max_new",
    "anchor_coef",  "anchor_cap",        "anchor_k",  "kl_ceiling", "iterations",
    "seed"};

std::string num(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::size_t get_count(const io::KeyValueConfig& kv, const std::string& key, std::size_t fallback) {
  const std::int64_t v = kv.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ValidationError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("ppo config: " + what);
}

}  // namespace

void PpoConfig::validate() const {
  require(clip_epsilon > 0.0 && clip_epsilon < 1.0, "clip_epsilon must be in (0, 1)");
  require(kl_coef >= 0.0 && std::isfinite(kl_coef), "kl_coef must be finite and >= 0");
  require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must be in [0, 1]");
  require(epochs > 0, "epochs must be positive");
  require(batch_prompts > 0, "batch_prompts must be positive");
  require(minibatch_prompts > 0, "minibatch_prompts must be positive");
  require(policy_lr >= 0.0 && std::isfinite(policy_lr), "policy_lr must be finite and >= 0");
  require(value_lr >= 0.0 && std::isfinite(value_lr), "value_lr must be finite and >= 0");
  require(max_new > 0, "max_new must be positive");
  require(anchor_coef >= 0.0 && std::isfinite(anchor_coef), "anchor_coef must be finite and >= 0");
  require(anchor_cap > 0.0, "anchor_cap must be positive");
  require(anchor_k > 0, "anchor_k must be positive");
  require(kl_ceiling > 0.0, "kl_ceiling must be positive");
}

PpoConfig PpoConfig::from_kv(const io::KeyValueConfig& kv) {
  kv.require_known(kKeys);
  PpoConfig c;
  c.clip_epsilon = kv.get_double("clip_epsilon", c.clip_epsilon);
  c.kl_coef = kv.get_double("kl_coef", c.kl_coef);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.gae_lambda = kv.get_double("gae_lambda", c.gae_lambda);
  c.epochs = get_count(kv, "epochs", c.epochs);
  c.batch_prompts = get_count(kv, "batch_prompts", c.batch_prompts);
  c.minibatch_prompts = get_count(kv, "minibatch_prompts", c.minibatch_prompts);
  c.policy_lr = kv.get_double("policy_lr", c.policy_lr);
  c.value_lr = kv.get_double("value_lr", c.value_lr);
  c.max_new = get_count(kv, "max_new", c.max_new);
  c.anchor_coef = kv.get_double("anchor_coef", c.anchor_coef);
  c.anchor_cap = kv.get_double("anchor_cap", c.anchor_cap);
  c.anchor_k = get_count(kv, "anchor_k", c.anchor_k);
  c.kl_ceiling = kv.get_double("kl_ceiling", c.kl_ceiling);
  c.iterations = get_count(kv, "iterations", c.iterations);
  c.seed = static_cast<std::uint64_t>(get_count(kv, "seed", c.seed));
  c.validate();
  return c;
}

io::KeyValueConfig PpoConfig::to_kv() const {
  io::KeyValueConfig kv;
  kv.set("clip_epsilon", num(clip_epsilon));
  kv.set("kl_coef", num(kl_coef));
  kv.set("gamma", num(gamma));
  kv.set("gae_lambda", num(gae_lambda));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_prompts", std::to_string(batch_prompts));
  kv.set("minibatch_prompts", std::to_string(minibatch_prompts));
  kv.set("policy_lr", num(policy_lr));
  kv.set("value_lr", num(value_lr));
  kv.set("max_new", std::to_string(max_new));
  kv.set("anchor_coef", num(anchor_coef));
  kv.set("anchor_cap", num(anchor_cap));
  kv.set("anchor_k", std::to_string(anchor_k));
  kv.set("kl_ceiling", num(kl_ceiling));
  kv.set("iterations", std::to_string(iterations));
  kv.set("seed", std::to_string(seed));
  return kv;
}

}  // namespace vvlab::ppo
