#pragma once

#include <functional>
#include <span>
#include <vector>

#include "vvlab/autodiff/ops.hpp"
#include "vvlab/lm/model.hpp"
#include "vvlab/lm/tokenizer.hpp"

namespace vvlab::lm {

// Residual states of one forward pass, rows matching the input tokens.
template <typename T>
struct LayerTrace {
  BasicTensor<T> pre;            // x before the block [N x d]
  BasicTensor<T> attn_update;    // [N x d]
  BasicTensor<T> mlp_update;     // [N x d]
  BasicTensor<T> post;           // pre + attn_update + mlp_update
  BasicTensor<T> coefficients;   // m after GELU and any intervention [N x d_mlp]
};

template <typename T>
struct ResidualTrace {
  std::vector<ad::Segment> segments;
  std::vector<LayerTrace<T>> layers;

  // Throws ContractError when the layer was not captured.
  const LayerTrace<T>& layer(std::size_t l) const;
};

// Called with the raw coefficients and the block output of each layer; may
// rewrite the output. Only honored on tapes that do not record.
template <typename T>
using MlpEdit = std::function<void(std::size_t layer, const BasicTensor<T>& coefficients,
                                   BasicTensor<T>& mlp_out)>;

template <typename T>
struct ForwardOptions {
  const InterventionSpec* intervention = nullptr;
  ResidualTrace<T>* trace = nullptr;
  const MlpEdit<T>* mlp_edit = nullptr;
};

// Model tensors as leaves of one tape.
template <typename T>
struct BoundModel {
  struct BlockVars {
    ad::Var<T> ln1_gain, ln1_bias, qkv_weight, qkv_bias, out_weight, out_bias;
    ad::Var<T> ln2_gain, ln2_bias, keys, key_bias, values, value_bias;
  };
  const BasicTransformerLM<T>* model = nullptr;
  ad::Tape<T>* tape = nullptr;
  ad::Var<T> embedding, positions, final_gain, final_bias;
  std::vector<BlockVars> blocks;

  // Leaves in BasicTransformerLM::named_parameters() order.
  std::vector<ad::Var<T>> leaves() const;
  // Gradient of each leaf after backward, same order; null where none flowed.
  std::vector<const BasicTensor<T>*> gradients() const;
};

template <typename T>
BoundModel<T> bind(ad::Tape<T>& tape, const BasicTransformerLM<T>& model,
                   bool requires_grad = true);

// Sequences stacked row-wise; positions restart at every segment.
struct PackedBatch {
  std::vector<TokenId> tokens;
  std::vector<ad::Segment> segments;

  static PackedBatch pack(std::span<const std::vector<TokenId>> sequences);
  // Row of the last token of each segment.
  std::vector<std::int32_t> last_rows() const;
};

// Residual stream after the last block, before the final norm [N x d].
template <typename T>
ad::Var<T> residual_stream(const BoundModel<T>& bound, std::span<const TokenId> tokens,
                           std::span<const ad::Segment> segments,
                           const ForwardOptions<T>& options = {});
template <typename T>
ad::Var<T> final_norm(const BoundModel<T>& bound, ad::Var<T> residual);
// normalized [n x d] times U^T.
template <typename T>
ad::Var<T> unembed(const BoundModel<T>& bound, ad::Var<T> normalized);

// Logits [n x V] of a single sequence, without gradients.
template <typename T>
BasicTensor<T> forward(const BasicTransformerLM<T>& model, std::span<const TokenId> tokens,
                       const ForwardOptions<T>& options = {});

// Logits of the selected rows of a packed batch, without gradients.
template <typename T>
BasicTensor<T> forward_rows(const BasicTransformerLM<T>& model, const PackedBatch& batch,
                            std::span<const std::int32_t> rows,
                            const ForwardOptions<T>& options = {});

template <typename T>
struct MlpDecomposition {
  struct Term {
    std::size_t index = 0;
    T coefficient = 0;
    std::vector<T> contribution;  // coefficient * v_index
  };
  std::vector<Term> terms;  // one per neuron
  std::vector<T> bias;      // value-side bias, zeros when absent
};

// Splits the MLP update at (layer, row) into its per-neuron parts.
template <typename T>
MlpDecomposition<T> mlp_update_decomposition(const BasicTransformerLM<T>& model,
                                             const ResidualTrace<T>& trace, std::size_t layer,
                                             std::size_t row);

}  // namespace vvlab::lm
