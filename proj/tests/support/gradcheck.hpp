#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vvlab/autodiff/ops.hpp"

namespace vvlab::testing {

// Builds the function under test on a fresh tape from leaf inputs.
using Fn64 = std::function<ad::Var<double>(ad::Tape<double>&, std::span<const ad::Var<double>>)>;

struct GradCheckResult {
  // Per input: ||analytic - numeric||_2 / max(||analytic||, ||numeric||, 1e-12).
  std::vector<double> rel_err;
  double max_rel_err() const;
};

// Compares reverse-mode gradients with central differences (step h) in double
// precision. A non-scalar output is reduced to sum(out * R) with a fixed
// random R drawn from `seed`, so every Jacobian row is exercised.
GradCheckResult gradcheck(const Fn64& fn, const std::vector<Tensor64>& inputs,
                          std::uint64_t seed, double h = 1e-4);

Tensor64 random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0);

}  // namespace vvlab::testing
