#include "vvlab/lm/model.hpp"

#include <cmath>
#include <set>

#include "vvlab/autodiff/rng.hpp"
#include "vvlab/error.hpp"

namespace vvlab::lm {

void ModelConfig::validate() const {
  if (vocab_size == 0 || n_layers == 0 || d_model < 2 || n_heads == 0 || d_mlp == 0 ||
      max_seq == 0) {
    throw ContractError("model config: every size must be positive (d_model >= 2)");
  }
  if (d_model % n_heads != 0) {
    throw ContractError("model config: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"n_layers", n_layers}, {"d_model", d_model},
          {"n_heads", n_heads},       {"d_mlp", d_mlp},       {"max_seq", max_seq},
          {"value_bias", value_bias}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_mlp = j.at("d_mlp").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.value_bias = j.value("value_bias", false);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("architecture metadata: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw ValidationError(e.what());
  }
  return c;
}

std::string to_string(const ValueVectorId& id) {
  return "(" + std::to_string(id.layer) + ", " + std::to_string(id.index) + ")";
}

void InterventionSpec::validate(const ModelConfig& config) const {
  std::set<ValueVectorId> seen;
  for (const auto& [id, alpha] : entries) {
    if (id.layer >= config.n_layers || id.index >= config.d_mlp) {
      throw IndexError("value vector " + to_string(id) + " outside model with " +
                       std::to_string(config.n_layers) + " layers of " +
                       std::to_string(config.d_mlp) + " neurons");
    }
    if (!seen.insert(id).second) {
      throw ContractError("intervention lists " + to_string(id) + " twice");
    }
    if (!std::isfinite(alpha)) throw ContractError("intervention alpha must be finite");
  }
}

template <typename T>
BasicTransformerLM<T>::BasicTransformerLM(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, f = config_.d_mlp;
  tok_embedding_ = TensorT({config_.vocab_size, d});
  pos_embedding_ = TensorT({config_.max_seq, d});
  blocks_.resize(config_.n_layers);
  for (Block<T>& b : blocks_) {
    b.ln1_gain = TensorT::full({d}, T(1));
    b.ln1_bias = TensorT({d});
    b.qkv_weight = TensorT({d, 3 * d});
    b.qkv_bias = TensorT({3 * d});
    b.out_weight = TensorT({d, d});
    b.out_bias = TensorT({d});
    b.ln2_gain = TensorT::full({d}, T(1));
    b.ln2_bias = TensorT({d});
    b.keys = TensorT({f, d});
    b.key_bias = TensorT({f});
    b.values = TensorT({f, d});
    if (config_.value_bias) b.value_bias = TensorT({d});
  }
  final_gain_ = TensorT::full({d}, T(1));
  final_bias_ = TensorT({d});
}

template <typename T>
BasicTransformerLM<T> BasicTransformerLM<T>::initialized(ModelConfig config, std::uint64_t seed) {
  BasicTransformerLM m(config);
  Rng rng(seed);
  const auto fill = [&rng](TensorT& t, double std) {
    for (T& v : t.data()) v = static_cast<T>(std * rng.normal());
  };
  const double residual_std = 0.02 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  fill(m.tok_embedding_, 0.02);
  fill(m.pos_embedding_, 0.01);
  for (Block<T>& b : m.blocks_) {
    fill(b.qkv_weight, 0.02);
    fill(b.out_weight, residual_std);
    fill(b.keys, 0.02);
    fill(b.values, residual_std);
  }
  return m;
}

template <typename T>
std::span<const T> BasicTransformerLM<T>::value_vector(const ValueVectorId& id) const {
  InterventionSpec{{{id, 1.0}}}.validate(config_);
  return blocks_[id.layer].values.row(id.index);
}

template <typename T>
std::span<const T> BasicTransformerLM<T>::key_vector(const ValueVectorId& id) const {
  InterventionSpec{{{id, 1.0}}}.validate(config_);
  return blocks_[id.layer].keys.row(id.index);
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>*>> BasicTransformerLM<T>::named_parameters() {
  std::vector<std::pair<std::string, TensorT*>> out;
  out.emplace_back("tok_embedding", &tok_embedding_);
  out.emplace_back("pos_embedding", &pos_embedding_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block<T>& b = blocks_[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.emplace_back(p + "ln1.gain", &b.ln1_gain);
    out.emplace_back(p + "ln1.bias", &b.ln1_bias);
    out.emplace_back(p + "attn.qkv.weight", &b.qkv_weight);
    out.emplace_back(p + "attn.qkv.bias", &b.qkv_bias);
    out.emplace_back(p + "attn.out.weight", &b.out_weight);
    out.emplace_back(p + "attn.out.bias", &b.out_bias);
    out.emplace_back(p + "ln2.gain", &b.ln2_gain);
    out.emplace_back(p + "ln2.bias", &b.ln2_bias);
    out.emplace_back(p + "mlp.keys", &b.keys);
    out.emplace_back(p + "mlp.key_bias", &b.key_bias);
    out.emplace_back(p + "mlp.values", &b.values);
    if (config_.value_bias) out.emplace_back(p + "mlp.value_bias", &b.value_bias);
  }
  out.emplace_back("final_ln.gain", &final_gain_);
  out.emplace_back("final_ln.bias", &final_bias_);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const BasicTensor<T>*>> BasicTransformerLM<T>::named_parameters()
    const {
  std::vector<std::pair<std::string, const TensorT*>> out;
  for (auto& [name, ptr] : const_cast<BasicTransformerLM*>(this)->named_parameters()) {
    out.emplace_back(name, ptr);
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>*> BasicTransformerLM<T>::parameters() {
  std::vector<TensorT*> out;
  for (auto& [name, ptr] : named_parameters()) out.push_back(ptr);
  return out;
}

template <typename T>
template <typename U>
BasicTransformerLM<U> BasicTransformerLM<T>::cast() const {
  BasicTransformerLM<U> out(config_);
  auto dst = out.named_parameters();
  auto src = named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
  return out;
}

template class BasicTransformerLM<float>;
template class BasicTransformerLM<double>;
template BasicTransformerLM<double> BasicTransformerLM<float>::cast<double>() const;
template BasicTransformerLM<float> BasicTransformerLM<double>::cast<float>() const;
template BasicTransformerLM<float> BasicTransformerLM<float>::cast<float>() const;
template BasicTransformerLM<double> BasicTransformerLM<double>::cast<double>() const;

}  // namespace vvlab::lm
