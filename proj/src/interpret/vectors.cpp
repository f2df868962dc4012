#include "vvlab/interpret/vectors.hpp"

#include <algorithm>
#include <cmath>

#include "vvlab/error.hpp"
#include "vvlab/io/hash.hpp"

namespace vvlab::interpret {

namespace {

template <typename A, typename B>
double cosine_impl(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

bool ranks_before(const RankedVector& a, const RankedVector& b) {
  if (a.cosine != b.cosine) return a.cosine > b.cosine;
  return a.id < b.id;
}

}  // namespace

double cosine(std::span<const float> a, std::span<const double> b) { return cosine_impl(a, b); }
double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }

NegativeSet rank_negative_vectors(const lm::TransformerLM& model,
                                  std::span<const double> direction, std::size_t k) {
  const lm::ModelConfig& cfg = model.config();
  if (k > cfg.n_layers * cfg.d_mlp) {
    throw ContractError("rank_negative_vectors: k=" + std::to_string(k) + " exceeds " +
                        std::to_string(cfg.n_layers * cfg.d_mlp) + " value vectors");
  }
  if (direction.size() != cfg.d_model) {
    throw ShapeError("rank_negative_vectors: direction has " + std::to_string(direction.size()) +
                     " entries, model width is " + std::to_string(cfg.d_model));
  }
  NegativeSet all;
  all.reserve(cfg.n_layers * cfg.d_mlp);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t i = 0; i < cfg.d_mlp; ++i) {
      all.push_back({{l, i}, cosine(model.block(l).values.row(i), direction)});
    }
  }
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    ranks_before);
  all.resize(k);
  return all;
}

nlohmann::json to_json(const NegativeSet& set) {
  nlohmann::json out = nlohmann::json::array();
  for (const RankedVector& r : set) {
    out.push_back({{"layer", r.id.layer}, {"index", r.id.index}, {"cosine", r.cosine}});
  }
  return out;
}

NegativeSet negative_set_from_json(const nlohmann::json& j) {
  NegativeSet out;
  try {
    if (!j.is_array()) throw ValidationError("negative set: expected a JSON list");
    for (const auto& e : j) {
      out.push_back({{e.at("layer").get<std::size_t>(), e.at("index").get<std::size_t>()},
                     e.value("cosine", 0.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("negative set: ") + e.what());
  }
  return out;
}

void save_negative_set(const std::filesystem::path& path, const NegativeSet& set) {
  io::write_file_atomic(path, to_json(set).dump(2) + "\n");
}

NegativeSet load_negative_set(const std::filesystem::path& path) {
  try {
    return negative_set_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("negative set: ") + e.what());
  }
}

std::vector<lm::ValueVectorId> ids_of(const NegativeSet& set) {
  std::vector<lm::ValueVectorId> out;
  for (const RankedVector& r : set) out.push_back(r.id);
  return out;
}

VocabProjection project_values(const lm::TransformerLM& model, const lm::Tokenizer& tokenizer,
                               const lm::ValueVectorId& id, std::size_t top_n) {
  const auto v = model.value_vector(id);
  const Tensor& e = model.embedding();
  if (tokenizer.size() != e.rows()) {
    throw ValidationError("project_values: tokenizer does not match the embedding");
  }
  std::vector<TokenScore> scores(e.rows());
  for (std::size_t w = 0; w < e.rows(); ++w) {
    double s = 0;
    const auto row = e.row(w);
    for (std::size_t j = 0; j < v.size(); ++j) s += static_cast<double>(row[j]) * v[j];
    scores[w] = {static_cast<lm::TokenId>(w), {}, s};
  }
  top_n = std::min(top_n, scores.size());
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(top_n),
                    scores.end(), [](const TokenScore& a, const TokenScore& b) {
                      return a.score != b.score ? a.score > b.score : a.id < b.id;
                    });
  scores.resize(top_n);
  for (TokenScore& s : scores) s.token = tokenizer.token(s.id);
  return {id, std::move(scores)};
}

}  // namespace vvlab::interpret
