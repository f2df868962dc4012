#include "op_catalog.hpp"

#include <algorithm>
#include <memory>

#include "vvlab/autodiff/rng.hpp"

namespace vvlab::testing {

namespace {

using ad::Tape;
using V = ad::Var<double>;
using Leaves = std::span<const V>;

template <typename Vec>
std::shared_ptr<const Vec> keep(Vec v) {
  return std::make_shared<const Vec>(std::move(v));
}

}  // namespace

std::vector<OpCase> op_catalog() {
  const auto targets = keep(std::vector<std::int32_t>{0, 3, 10, 7, 7, 2});
  const auto factors = keep(std::vector<double>{2.0, 0.0, -1.0, 10.0});
  const auto labels = keep(std::vector<double>{1, 0, 0, 1, 1});
  const auto mse_target = keep(std::vector<double>{0.5, -1, 2, 0, 1});
  const auto rows = keep(std::vector<std::int32_t>{4, 0, 4, 2});
  const auto segs = keep(std::vector<ad::Segment>{{0, 2}, {2, 1}, {3, 3}});
  const auto attn_segs = keep(std::vector<ad::Segment>{{0, 3}, {3, 4}});

  std::vector<OpCase> ops;
  ops.push_back({"matmul", [](Tape<double>&, Leaves x) { return ad::matmul(x[0], x[1]); },
                 {{5, 4}, {4, 3}}});
  ops.push_back({"matmul_transposed",
                 [](Tape<double>&, Leaves x) { return ad::matmul_transposed(x[0], x[1]); },
                 {{5, 4}, {3, 4}}});
  ops.push_back({"add", [](Tape<double>&, Leaves x) { return ad::add(x[0], x[1]); },
                 {{3, 4}, {3, 4}}});
  ops.push_back({"sub", [](Tape<double>&, Leaves x) { return ad::sub(x[0], x[1]); },
                 {{3, 4}, {3, 4}}});
  ops.push_back({"mul", [](Tape<double>&, Leaves x) { return ad::mul(x[0], x[1]); },
                 {{3, 4}, {3, 4}}});
  ops.push_back({"add_bias", [](Tape<double>&, Leaves x) { return ad::add_bias(x[0], x[1]); },
                 {{3, 4}, {4}}});
  ops.push_back({"scale", [](Tape<double>&, Leaves x) { return ad::scale(x[0], -2.5); }, {{5}}});
  ops.push_back({"scale_columns",
                 [factors](Tape<double>&, Leaves x) {
                   return ad::scale_columns(x[0], std::span<const double>(*factors));
                 },
                 {{3, 4}}});
  ops.push_back({"reshape", [](Tape<double>&, Leaves x) { return ad::reshape(x[0], {6, 2}); },
                 {{3, 4}}});
  ops.push_back({"gelu", [](Tape<double>&, Leaves x) { return ad::gelu(x[0]); }, {{11}}, 2.0});
  ops.push_back({"softmax", [](Tape<double>&, Leaves x) { return ad::softmax(x[0]); }, {{7}}});
  ops.push_back({"softmax_axis0", [](Tape<double>&, Leaves x) { return ad::softmax(x[0], 0); },
                 {{4, 3}}});
  ops.push_back({"layer_norm",
                 [](Tape<double>&, Leaves x) { return ad::layer_norm(x[0], x[1], x[2]); },
                 {{3, 8}, {8}, {8}}});
  ops.push_back({"cross_entropy",
                 [targets](Tape<double>&, Leaves x) {
                   return ad::cross_entropy(x[0], std::span<const std::int32_t>(*targets));
                 },
                 {{6, 11}}});
  ops.push_back({"token_log_probs",
                 [targets](Tape<double>&, Leaves x) {
                   return ad::token_log_probs(x[0], std::span<const std::int32_t>(*targets));
                 },
                 {{6, 11}}});
  ops.push_back({"bce_with_logits",
                 [labels](Tape<double>&, Leaves x) {
                   return ad::bce_with_logits(x[0], std::span<const double>(*labels));
                 },
                 {{5}},
                 3.0});
  ops.push_back({"mse",
                 [mse_target](Tape<double>&, Leaves x) {
                   return ad::mse(x[0], std::span<const double>(*mse_target));
                 },
                 {{5}}});
  ops.push_back({"gather_rows",
                 [rows](Tape<double>&, Leaves x) {
                   return ad::gather_rows(x[0], std::span<const std::int32_t>(*rows));
                 },
                 {{5, 3}}});
  ops.push_back({"segment_mean",
                 [segs](Tape<double>&, Leaves x) {
                   return ad::segment_mean(x[0], std::span<const ad::Segment>(*segs));
                 },
                 {{6, 3}}});
  ops.push_back({"causal_attention",
                 [attn_segs](Tape<double>&, Leaves x) {
                   return ad::causal_attention(x[0], std::span<const ad::Segment>(*attn_segs), 2);
                 },
                 {{7, 12}}});
  ops.push_back({"sum", [](Tape<double>&, Leaves x) { return ad::sum(x[0]); }, {{3, 4}}});
  ops.push_back({"mean", [](Tape<double>&, Leaves x) { return ad::mean(x[0]); }, {{3, 4}}});
  ops.push_back({"row_norms", [](Tape<double>&, Leaves x) { return ad::row_norms(x[0]); },
                 {{4, 3}}});
  // Each entry is pushed 0.05 away from the cap so the kink is never straddled.
  ops.push_back({"clamp_max",
                 [](Tape<double>& tape, Leaves x) {
                   Tensor64 offset = Tensor64::zeros(x[0].value().shape());
                   for (std::size_t i = 0; i < offset.numel(); ++i) {
                     offset[i] = x[0].value()[i] >= 0 ? 0.05 : -0.05;
                   }
                   return ad::clamp_max(ad::add(x[0], tape.constant(offset)), 0.0);
                 },
                 {{9}}});
  return ops;
}

double worst_gradcheck_error(const OpCase& op, int seeds) {
  double worst = 0;
  for (int s = 0; s < seeds; ++s) {
    std::vector<Tensor64> inputs;
    for (std::size_t k = 0; k < op.shapes.size(); ++k) {
      inputs.push_back(random_tensor(op.shapes[k], derive_seed(1000 + s, k), op.scale));
    }
    worst = std::max(worst, gradcheck(op.fn, inputs, s).max_rel_err());
  }
  return worst;
}

}  // namespace vvlab::testing
