#pragma once

#include <cstdint>

#include "vvlab/io/kv_config.hpp"

namespace vvlab::ppo {

struct PpoConfig {
  double clip_epsilon = 0.2;
  // Per-token KL penalty coefficient in the shaped reward.
  double kl_coef = 0.05;
  double gamma = 1.0;
  double gae_lambda = 0.95;
  std::size_t epochs = 4;
  std::size_t batch_prompts = 64;
  std::size_t minibatch_prompts = 64;
  double policy_lr = 1e-4;
  double value_lr = 1e-3;
  std::size_t max_new = 12;
  // Anchor regularizer: coefficient, per-vector distance cap, set size.
  double anchor_coef = 0.0;
  double anchor_cap = 1.0;
  std::size_t anchor_k = 10;
  // Mean sequence KL (nats) to the reference above which training aborts.
  double kl_ceiling = 10.0;
  std::size_t iterations = 60;
  std::uint64_t seed = 1;

  // Throws ValidationError naming the first out-of-range field.
  void validate() const;
  // Unknown keys are rejected; absent keys keep their defaults.
  static PpoConfig from_kv(const io::KeyValueConfig& kv);
  io::KeyValueConfig to_kv() const;
};

}  // namespace vvlab::ppo
