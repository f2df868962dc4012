#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vvlab/autodiff/tensor.hpp"

namespace vvlab::lm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_mlp = 256;
  std::size_t max_seq = 64;
  // GPT-2 carries a bias after the value matrix; the toy model does not.
  bool value_bias = false;

  // Throws ContractError on an inconsistent configuration.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Names MLP neuron `index` of block `layer`: key row k_i and value row v_i.
struct ValueVectorId {
  std::size_t layer = 0;
  std::size_t index = 0;
  auto operator<=>(const ValueVectorId&) const = default;
};

std::string to_string(const ValueVectorId& id);

// Coefficient multipliers: m_i of each listed neuron becomes alpha * m_i.
struct InterventionSpec {
  std::vector<std::pair<ValueVectorId, double>> entries;

  // Throws IndexError for ids outside the model and ContractError for
  // duplicates or non-finite alphas.
  void validate(const ModelConfig& config) const;
};

template <typename T>
struct Block {
  BasicTensor<T> ln1_gain, ln1_bias;
  BasicTensor<T> qkv_weight, qkv_bias;  // [d x 3d], [3d]
  BasicTensor<T> out_weight, out_bias;  // [d x d], [d]
  BasicTensor<T> ln2_gain, ln2_bias;
  BasicTensor<T> keys, key_bias;        // [d_mlp x d], [d_mlp]
  BasicTensor<T> values;                // [d_mlp x d], row i = v_i
  BasicTensor<T> value_bias;            // [d], only when config.value_bias
};

// Pre-norm GPT-2 style decoder with learned positions and an unembedding tied
// to the token embedding.
template <typename T>
class BasicTransformerLM {
 public:
  using TensorT = BasicTensor<T>;

  BasicTransformerLM() = default;
  // All weights zero, norm gains one.
  explicit BasicTransformerLM(ModelConfig config);
  // Normal(0, 0.02) weights; residual output projections scaled by
  // 1/sqrt(2 L); positions Normal(0, 0.01); biases zero.
  static BasicTransformerLM initialized(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  TensorT& embedding() { return tok_embedding_; }
  const TensorT& embedding() const { return tok_embedding_; }
  // Same storage as embedding().
  TensorT& unembedding() { return tok_embedding_; }
  const TensorT& unembedding() const { return tok_embedding_; }
  TensorT& positions() { return pos_embedding_; }
  const TensorT& positions() const { return pos_embedding_; }
  Block<T>& block(std::size_t l) { return blocks_.at(l); }
  const Block<T>& block(std::size_t l) const { return blocks_.at(l); }
  TensorT& final_gain() { return final_gain_; }
  const TensorT& final_gain() const { return final_gain_; }
  TensorT& final_bias() { return final_bias_; }
  const TensorT& final_bias() const { return final_bias_; }

  std::span<const T> value_vector(const ValueVectorId& id) const;
  std::span<const T> key_vector(const ValueVectorId& id) const;

  // Every trainable tensor under its checkpoint name, in a fixed order.
  std::vector<std::pair<std::string, TensorT*>> named_parameters();
  std::vector<std::pair<std::string, const TensorT*>> named_parameters() const;
  std::vector<TensorT*> parameters();

  template <typename U>
  BasicTransformerLM<U> cast() const;

 private:
  template <typename U>
  friend class BasicTransformerLM;

  ModelConfig config_;
  TensorT tok_embedding_;  // [V x d]
  TensorT pos_embedding_;  // [T_max x d]
  std::vector<Block<T>> blocks_;
  TensorT final_gain_, final_bias_;
};

using TransformerLM = BasicTransformerLM<float>;

extern template class BasicTransformerLM<float>;
extern template class BasicTransformerLM<double>;

}  // namespace vvlab::lm
