#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "vvlab/lm/model.hpp"
#include "vvlab/lm/tokenizer.hpp"

namespace vvlab::interpret {

// Mean over positions of the residual stream after the last block, before
// the final norm: the space the value vectors write into.
std::vector<double> sentence_representation(const lm::TransformerLM& model,
                                            std::span<const lm::TokenId> tokens);
std::vector<std::vector<double>> sentence_representations(
    const lm::TransformerLM& model, std::span<const std::vector<lm::TokenId>> sequences,
    std::size_t batch_size = 64);

struct ProbeSample {
  std::vector<double> x;
  bool negative = false;
};

struct ProbeConfig {
  std::size_t iterations = 500;
  double lr = 1.0;
  // Ridge penalty on the weights in whitened coordinates.
  double l2 = 1e-3;
};

// Unit normal of the separating hyperplane. A point is predicted negative
// when w_neg . x + bias > 0.
struct ProbeDirection {
  std::vector<double> w_neg;
  double bias = 0;
  double train_accuracy = 0;
  double heldout_accuracy = 0;

  bool predicts_negative(std::span<const double> x) const;
  nlohmann::json to_json() const;
  static ProbeDirection from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ProbeDirection load(const std::filesystem::path& path);
};

// Full-batch gradient descent on the mean logistic loss from zero weights,
// on features whitened with the training mean and covariance. Every tenth distinct
// representation (in order of first appearance) is held out, so copies of a
// point always land on the same side. Throws ValidationError when a class
// is missing or dimensions disagree.
ProbeDirection train_probe(std::span<const ProbeSample> samples, const ProbeConfig& config = {});

}  // namespace vvlab::interpret
