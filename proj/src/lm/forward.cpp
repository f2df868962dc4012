#include "vvlab/lm/forward.hpp"

#include <map>

#include "vvlab/error.hpp"

namespace vvlab::lm {

template <typename T>
const LayerTrace<T>& ResidualTrace<T>::layer(std::size_t l) const {
  if (l >= layers.size()) {
    throw ContractError("trace holds " + std::to_string(layers.size()) + " layers, asked for " +
                        std::to_string(l));
  }
  return layers[l];
}

template <typename T>
BoundModel<T> bind(ad::Tape<T>& tape, const BasicTransformerLM<T>& model, bool requires_grad) {
  BoundModel<T> b;
  b.model = &model;
  b.tape = &tape;
  b.embedding = tape.parameter(model.embedding(), requires_grad);
  b.positions = tape.parameter(model.positions(), requires_grad);
  for (std::size_t l = 0; l < model.config().n_layers; ++l) {
    const Block<T>& k = model.block(l);
    typename BoundModel<T>::BlockVars v;
    v.ln1_gain = tape.parameter(k.ln1_gain, requires_grad);
    v.ln1_bias = tape.parameter(k.ln1_bias, requires_grad);
    v.qkv_weight = tape.parameter(k.qkv_weight, requires_grad);
    v.qkv_bias = tape.parameter(k.qkv_bias, requires_grad);
    v.out_weight = tape.parameter(k.out_weight, requires_grad);
    v.out_bias = tape.parameter(k.out_bias, requires_grad);
    v.ln2_gain = tape.parameter(k.ln2_gain, requires_grad);
    v.ln2_bias = tape.parameter(k.ln2_bias, requires_grad);
    v.keys = tape.parameter(k.keys, requires_grad);
    v.key_bias = tape.parameter(k.key_bias, requires_grad);
    v.values = tape.parameter(k.values, requires_grad);
    if (model.config().value_bias) v.value_bias = tape.parameter(k.value_bias, requires_grad);
    b.blocks.push_back(v);
  }
  b.final_gain = tape.parameter(model.final_gain(), requires_grad);
  b.final_bias = tape.parameter(model.final_bias(), requires_grad);
  return b;
}

template <typename T>
std::vector<ad::Var<T>> BoundModel<T>::leaves() const {
  std::vector<ad::Var<T>> out = {embedding, positions};
  for (const BlockVars& v : blocks) {
    out.insert(out.end(), {v.ln1_gain, v.ln1_bias, v.qkv_weight, v.qkv_bias, v.out_weight,
                           v.out_bias, v.ln2_gain, v.ln2_bias, v.keys, v.key_bias, v.values});
    if (model->config().value_bias) out.push_back(v.value_bias);
  }
  out.push_back(final_gain);
  out.push_back(final_bias);
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BoundModel<T>::gradients() const {
  std::vector<const BasicTensor<T>*> out;
  for (const ad::Var<T>& v : leaves()) out.push_back(tape->grad(v));
  return out;
}

PackedBatch PackedBatch::pack(std::span<const std::vector<TokenId>> sequences) {
  PackedBatch p;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ContractError("cannot pack an empty sequence");
    p.segments.push_back({p.tokens.size(), seq.size()});
    p.tokens.insert(p.tokens.end(), seq.begin(), seq.end());
  }
  return p;
}

std::vector<std::int32_t> PackedBatch::last_rows() const {
  std::vector<std::int32_t> rows;
  for (const ad::Segment& s : segments) rows.push_back(static_cast<std::int32_t>(s.start + s.length - 1));
  return rows;
}

template <typename T>
ad::Var<T> residual_stream(const BoundModel<T>& bound, std::span<const TokenId> tokens,
                           std::span<const ad::Segment> segments,
                           const ForwardOptions<T>& options) {
  const ModelConfig& cfg = bound.model->config();
  ad::Tape<T>& tape = *bound.tape;
  std::size_t covered = 0;
  std::vector<std::int32_t> positions(tokens.size(), -1);
  for (const ad::Segment& s : segments) {
    if (s.length == 0 || s.start + s.length > tokens.size()) {
      throw ContractError("segment outside the token list");
    }
    if (s.length > cfg.max_seq) {
      throw ValidationError("sequence of " + std::to_string(s.length) +
                            " tokens exceeds the context of " + std::to_string(cfg.max_seq));
    }
    for (std::size_t t = 0; t < s.length; ++t) positions[s.start + t] = static_cast<std::int32_t>(t);
    covered += s.length;
  }
  if (tokens.empty() || covered != tokens.size()) {
    throw ContractError("segments must tile a non-empty token list");
  }
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
  }

  // Per layer: column factors for the coefficients.
  std::map<std::size_t, std::vector<T>> factors;
  if (options.intervention != nullptr) {
    options.intervention->validate(cfg);
    for (const auto& [id, alpha] : options.intervention->entries) {
      auto& f = factors.try_emplace(id.layer, cfg.d_mlp, T(1)).first->second;
      f[id.index] = static_cast<T>(alpha);
    }
  }
  if (options.trace != nullptr) {
    options.trace->segments.assign(segments.begin(), segments.end());
    options.trace->layers.clear();
  }

  ad::Var<T> x = ad::add(ad::gather_rows(bound.embedding, tokens),
                         ad::gather_rows(bound.positions, std::span<const std::int32_t>(positions)));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& b = bound.blocks[l];
    ad::Var<T> h = ad::layer_norm(x, b.ln1_gain, b.ln1_bias);
    ad::Var<T> qkv = ad::add_bias(ad::matmul(h, b.qkv_weight), b.qkv_bias);
    ad::Var<T> attn = ad::add_bias(
        ad::matmul(ad::causal_attention(qkv, segments, cfg.n_heads), b.out_weight), b.out_bias);
    ad::Var<T> mid = ad::add(x, attn);

    ad::Var<T> h2 = ad::layer_norm(mid, b.ln2_gain, b.ln2_bias);
    ad::Var<T> m = ad::gelu(ad::add_bias(ad::matmul_transposed(h2, b.keys), b.key_bias));
    const ad::Var<T> raw_m = m;
    if (auto it = factors.find(l); it != factors.end()) {
      m = ad::scale_columns(m, std::span<const T>(it->second));
    }
    ad::Var<T> mlp = ad::matmul(m, b.values);
    if (cfg.value_bias) mlp = ad::add_bias(mlp, b.value_bias);
    if (options.mlp_edit != nullptr && !tape.recording()) {
      BasicTensor<T> edited = mlp.value();
      (*options.mlp_edit)(l, raw_m.value(), edited);
      mlp = tape.constant(std::move(edited));
    }
    ad::Var<T> next = ad::add(mid, mlp);
    if (options.trace != nullptr) {
      options.trace->layers.push_back(
          {x.value(), attn.value(), mlp.value(), next.value(), m.value()});
    }
    x = next;
  }
  return x;
}

template <typename T>
ad::Var<T> final_norm(const BoundModel<T>& bound, ad::Var<T> residual) {
  return ad::layer_norm(residual, bound.final_gain, bound.final_bias);
}

template <typename T>
ad::Var<T> unembed(const BoundModel<T>& bound, ad::Var<T> normalized) {
  return ad::matmul_transposed(normalized, bound.embedding);
}

template <typename T>
BasicTensor<T> forward(const BasicTransformerLM<T>& model, std::span<const TokenId> tokens,
                       const ForwardOptions<T>& options) {
  if (tokens.empty()) throw ContractError("forward: empty token sequence");
  ad::Tape<T> tape(false);
  const BoundModel<T> bound = bind(tape, model, false);
  const ad::Segment seg{0, tokens.size()};
  ad::Var<T> x = residual_stream(bound, tokens, std::span<const ad::Segment>(&seg, 1), options);
  return unembed(bound, final_norm(bound, x)).value();
}

template <typename T>
BasicTensor<T> forward_rows(const BasicTransformerLM<T>& model, const PackedBatch& batch,
                            std::span<const std::int32_t> rows,
                            const ForwardOptions<T>& options) {
  ad::Tape<T> tape(false);
  const BoundModel<T> bound = bind(tape, model, false);
  ad::Var<T> x = residual_stream(bound, std::span<const TokenId>(batch.tokens),
                                 std::span<const ad::Segment>(batch.segments), options);
  return unembed(bound, final_norm(bound, ad::gather_rows(x, rows))).value();
}

template <typename T>
MlpDecomposition<T> mlp_update_decomposition(const BasicTransformerLM<T>& model,
                                             const ResidualTrace<T>& trace, std::size_t layer,
                                             std::size_t row) {
  const LayerTrace<T>& lt = trace.layer(layer);
  if (row >= lt.coefficients.rows()) {
    throw IndexError("trace row " + std::to_string(row) + " out of range");
  }
  const ModelConfig& cfg = model.config();
  const Block<T>& block = model.block(layer);
  MlpDecomposition<T> out;
  out.terms.reserve(cfg.d_mlp);
  for (std::size_t i = 0; i < cfg.d_mlp; ++i) {
    const T m = lt.coefficients.at(row, i);
    typename MlpDecomposition<T>::Term term{i, m, std::vector<T>(cfg.d_model)};
    const auto v = block.values.row(i);
    for (std::size_t j = 0; j < cfg.d_model; ++j) term.contribution[j] = m * v[j];
    out.terms.push_back(std::move(term));
  }
  out.bias.assign(cfg.d_model, T(0));
  if (cfg.value_bias) out.bias.assign(block.value_bias.data().begin(), block.value_bias.data().end());
  return out;
}

#define VVLAB_INSTANTIATE(T)                                                                      \
  template struct ResidualTrace<T>;                                                               \
  template struct BoundModel<T>;                                                                  \
  template BoundModel<T> bind(ad::Tape<T>&, const BasicTransformerLM<T>&, bool);                  \
  template ad::Var<T> residual_stream(const BoundModel<T>&, std::span<const TokenId>,             \
                                      std::span<const ad::Segment>, const ForwardOptions<T>&);    \
  template ad::Var<T> final_norm(const BoundModel<T>&, ad::Var<T>);                               \
  template ad::Var<T> unembed(const BoundModel<T>&, ad::Var<T>);                                  \
  template BasicTensor<T> forward(const BasicTransformerLM<T>&, std::span<const TokenId>,         \
                                  const ForwardOptions<T>&);                                      \
  template BasicTensor<T> forward_rows(const BasicTransformerLM<T>&, const PackedBatch&,          \
                                       std::span<const std::int32_t>, const ForwardOptions<T>&);  \
  template MlpDecomposition<T> mlp_update_decomposition(                                          \
      const BasicTransformerLM<T>&, const ResidualTrace<T>&, std::size_t, std::size_t);

VVLAB_INSTANTIATE(float)
VVLAB_INSTANTIATE(double)

}  // namespace vvlab::lm
