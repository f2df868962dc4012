#include "gradcheck.hpp"

#include <algorithm>
#include <optional>
#include <cmath>

#include "vvlab/autodiff/rng.hpp"

namespace vvlab::testing {

namespace {

ad::Var<double> reduce(ad::Tape<double>& tape, ad::Var<double> out, const Tensor64* weights) {
  if (weights == nullptr) return out;
  return ad::sum(ad::mul(out, tape.constant(*weights)));
}

double evaluate(const Fn64& fn, const std::vector<Tensor64>& inputs, const Tensor64* weights) {
  ad::Tape<double> tape(false);
  std::vector<ad::Var<double>> leaves;
  for (const Tensor64& x : inputs) leaves.push_back(tape.constant(x));
  return reduce(tape, fn(tape, leaves), weights).value().item();
}

}  // namespace

double GradCheckResult::max_rel_err() const {
  return rel_err.empty() ? 0.0 : *std::max_element(rel_err.begin(), rel_err.end());
}

Tensor64 random_tensor(Shape shape, std::uint64_t seed, double scale) {
  Tensor64 t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

GradCheckResult gradcheck(const Fn64& fn, const std::vector<Tensor64>& inputs,
                          std::uint64_t seed, double h) {
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> leaves;
  for (const Tensor64& x : inputs) leaves.push_back(tape.variable(x));
  const ad::Var<double> out = fn(tape, leaves);
  std::optional<Tensor64> weights;
  if (out.value().numel() != 1) weights = random_tensor(out.shape(), derive_seed(seed, 0x52));
  const Tensor64* w = weights ? &*weights : nullptr;
  tape.backward(reduce(tape, out, w));

  GradCheckResult result;
  std::vector<Tensor64> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor64* analytic = tape.grad(leaves[k]);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t j = 0; j < inputs[k].numel(); ++j) {
      const double x0 = inputs[k][j];
      probe[k][j] = x0 + h;
      const double up = evaluate(fn, probe, w);
      probe[k][j] = x0 - h;
      const double down = evaluate(fn, probe, w);
      probe[k][j] = x0;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic ? (*analytic)[j] : 0.0;
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    result.rel_err.push_back(std::sqrt(diff2) /
                             std::max({std::sqrt(a2), std::sqrt(n2), 1e-12}));
  }
  return result;
}

}  // namespace vvlab::testing
