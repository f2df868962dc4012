#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vvlab/lm/model.hpp"
#include "vvlab/lm/tokenizer.hpp"

namespace vvlab::interpret {

// Cosine in double; 0 when either vector is zero.
double cosine(std::span<const float> a, std::span<const double> b);
double cosine(std::span<const float> a, std::span<const float> b);

struct RankedVector {
  lm::ValueVectorId id;
  double cosine = 0;
};

// Ranked by cosine descending, ties by (layer, index) ascending.
using NegativeSet = std::vector<RankedVector>;

// Cosine of every value vector with `direction`; the k largest. Throws
// ContractError when k exceeds L * d_mlp and ShapeError on a dimension
// mismatch.
NegativeSet rank_negative_vectors(const lm::TransformerLM& model,
                                  std::span<const double> direction, std::size_t k);

nlohmann::json to_json(const NegativeSet& set);
NegativeSet negative_set_from_json(const nlohmann::json& j);
void save_negative_set(const std::filesystem::path& path, const NegativeSet& set);
NegativeSet load_negative_set(const std::filesystem::path& path);
std::vector<lm::ValueVectorId> ids_of(const NegativeSet& set);

struct TokenScore {
  lm::TokenId id = 0;
  std::string token;
  double score = 0;
};

struct VocabProjection {
  lm::ValueVectorId id;
  std::vector<TokenScore> top;  // scores non-increasing
};

// e_w . v for every token w; the top_n largest (ties by token id).
VocabProjection project_values(const lm::TransformerLM& model, const lm::Tokenizer& tokenizer,
                               const lm::ValueVectorId& id, std::size_t top_n);

}  // namespace vvlab::interpret
