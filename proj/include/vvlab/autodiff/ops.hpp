#pragma once

#include <cstdint>
#include <span>

#include "vvlab/autodiff/tape.hpp"

// Differentiable ops. None of them mutates its inputs; each returns a new
// node on the inputs' tape. Matrix ops read a tensor as [rows x cols] with
// cols the last dimension.
namespace vvlab::ad {

// Contiguous run of rows forming one sequence inside a stacked batch.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// a[m x k] * b[n x k]^T
template <typename T> Var<T> matmul_transposed(Var<T> a, Var<T> b);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
// x[m x n] + bias[n], broadcast over rows.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T> Var<T> scale(Var<T> x, T factor);
// Multiplies column j of x by factors[j] (constants).
template <typename T> Var<T> scale_columns(Var<T> x, std::span<const T> factors);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

// GELU, tanh approximation.
template <typename T> Var<T> gelu(Var<T> x);
// Numerically stable softmax along `axis` (negative counts from the end).
template <typename T> Var<T> softmax(Var<T> x, int axis = -1);
// Per-row normalization over the last dimension followed by gain/bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5);

// Mean over rows of -log softmax(logits[i])[targets[i]].
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets);
// out[i] = log softmax(logits[i])[targets[i]].
template <typename T>
Var<T> token_log_probs(Var<T> logits, std::span<const std::int32_t> targets);
// Mean of log(1 + exp(z)) - y z, labels in {0, 1}.
template <typename T>
Var<T> bce_with_logits(Var<T> logits, std::span<const T> labels);
// Mean squared error against constant targets.
template <typename T>
Var<T> mse(Var<T> pred, std::span<const T> target);

// out[i] = table[rows[i]]; gradient scatters only into the selected rows.
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> rows);
// out[s] = mean of the rows in segments[s].
template <typename T>
Var<T> segment_mean(Var<T> x, std::span<const Segment> segments);

// Multi-head causal self-attention on stacked q|k|v columns [N x 3d].
// Positions attend to earlier or equal positions of the same segment.
template <typename T>
Var<T> causal_attention(Var<T> qkv, std::span<const Segment> segments,
                        std::size_t n_heads);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Euclidean norm of each row; the gradient at a zero row is zero.
template <typename T> Var<T> row_norms(Var<T> x);
// min(x, cap) elementwise; no gradient where the cap binds.
template <typename T> Var<T> clamp_max(Var<T> x, T cap);

}  // namespace vvlab::ad
