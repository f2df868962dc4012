#include "vvlab/ppo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "vvlab/error.hpp"

namespace vvlab::ppo {

template <typename T>
ad::Var<T> clipped_surrogate(ad::Var<T> new_log_probs, std::span<const double> old_log_probs,
                             std::span<const double> advantages, double epsilon,
                             SurrogateStats* stats) {
  const BasicTensor<T>& lp = new_log_probs.value();
  const std::size_t n = lp.numel();
  if (n == 0 || old_log_probs.size() != n || advantages.size() != n) {
    throw ShapeError("clipped_surrogate: " + std::to_string(n) + " new log-probs, " +
                     std::to_string(old_log_probs.size()) + " old, " +
                     std::to_string(advantages.size()) + " advantages");
  }
  // d loss / d new_i: -A_i rho_i / n where the unclipped branch is selected.
  std::vector<double> slope(n, 0.0);
  double total = 0.0;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = std::exp(static_cast<double>(lp[i]) - old_log_probs[i]);
    if (!std::isfinite(rho)) {
      throw DivergenceError("clipped_surrogate: ratio not finite at token " + std::to_string(i) +
                            " (new " + std::to_string(lp[i]) + ", old " +
                            std::to_string(old_log_probs[i]) + ")");
    }
    const double a = advantages[i];
    const double bounded = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
    if (bounded != rho) ++clipped;
    const double plain = rho * a;
    const double capped = bounded * a;
    if (plain <= capped) {
      total += plain;
      slope[i] = -a * rho / static_cast<double>(n);
    } else {
      total += capped;
    }
  }
  if (stats != nullptr) {
    stats->tokens += n;
    stats->clipped += clipped;
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(-total / static_cast<double>(n)));
  return new_log_probs.tape->push(
      std::move(out), {new_log_probs},
      [new_log_probs, slope = std::move(slope)](ad::Tape<T>& tape, const BasicTensor<T>& g) {
        BasicTensor<T> grad(new_log_probs.shape());
        for (std::size_t i = 0; i < slope.size(); ++i) grad[i] = static_cast<T>(g[0] * slope[i]);
        tape.accumulate(new_log_probs, grad);
      });
}

template ad::Var<float> clipped_surrogate<float>(ad::Var<float>, std::span<const double>,
                                                 std::span<const double>, double,
                                                 SurrogateStats*);
template ad::Var<double> clipped_surrogate<double>(ad::Var<double>, std::span<const double>,
                                                   std::span<const double>, double,
                                                   SurrogateStats*);

AnchorRegularizer AnchorRegularizer::snapshot(const lm::TransformerLM& model,
                                              std::vector<lm::ValueVectorId> ids, double coef,
                                              double cap) {
  AnchorRegularizer reg;
  reg.ids_ = std::move(ids);
  reg.coef_ = coef;
  reg.cap_ = cap;
  std::set<lm::ValueVectorId> seen;
  for (const auto& id : reg.ids_) {
    if (!seen.insert(id).second) {
      throw ContractError("anchor set repeats value vector " + lm::to_string(id));
    }
  }
  reg.check(model.config());
  for (const auto& id : reg.ids_) {
    const auto v = model.block(id.layer).values.row(id.index);
    reg.original_.emplace_back(v.begin(), v.end());
  }
  return reg;
}

void AnchorRegularizer::check(const lm::ModelConfig& config) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const auto& id = ids_[i];
    if (id.layer >= config.n_layers || id.index >= config.d_mlp) {
      throw IndexError("anchor vector " + lm::to_string(id) + " outside a model with " +
                       std::to_string(config.n_layers) + " layers of " +
                       std::to_string(config.d_mlp) + " neurons");
    }
    if (!original_.empty() && original_[i].size() != config.d_model) {
      throw ShapeError("anchor snapshot has width " + std::to_string(original_[i].size()) +
                       ", model has d_model " + std::to_string(config.d_model));
    }
  }
}

std::vector<double> AnchorRegularizer::distances(const lm::TransformerLM& model) const {
  check(model.config());
  std::vector<double> out;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const auto v = model.block(ids_[i].layer).values.row(ids_[i].index);
    double sq = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double d = double(v[j]) - original_[i][j];
      sq += d * d;
    }
    out.push_back(std::sqrt(sq));
  }
  return out;
}

double AnchorRegularizer::mean_distance(const lm::TransformerLM& model) const {
  if (ids_.empty()) return 0.0;
  const auto d = distances(model);
  double total = 0.0;
  for (double x : d) total += x;
  return total / static_cast<double>(d.size());
}

double AnchorRegularizer::penalty(const lm::TransformerLM& model) const {
  double total = 0.0;
  for (double x : distances(model)) total += std::min(x, cap_);
  return -coef_ * total;
}

ad::Var<float> AnchorRegularizer::penalty(const lm::BoundModel<float>& bound) const {
  check(bound.model->config());
  if (ids_.empty()) throw ContractError("anchor penalty: empty vector set");
  std::map<std::size_t, std::vector<std::size_t>> by_layer;
  for (std::size_t i = 0; i < ids_.size(); ++i) by_layer[ids_[i].layer].push_back(i);

  const std::size_t d = original_.front().size();
  ad::Tape<float>& tape = *bound.tape;
  ad::Var<float> total{};
  bool first = true;
  for (const auto& [layer, members] : by_layer) {
    std::vector<std::int32_t> rows;
    Tensor snap({members.size(), d});
    for (std::size_t k = 0; k < members.size(); ++k) {
      rows.push_back(static_cast<std::int32_t>(ids_[members[k]].index));
      std::copy(original_[members[k]].begin(), original_[members[k]].end(), snap.row(k).begin());
    }
    const auto moved = ad::sub(ad::gather_rows(bound.blocks[layer].values, rows),
                               tape.constant(std::move(snap)));
    const auto part =
        ad::sum(ad::clamp_max(ad::row_norms(moved), static_cast<float>(cap_)));
    total = first ? part : ad::add(total, part);
    first = false;
  }
  return ad::scale(total, static_cast<float>(-coef_));
}

}  // namespace vvlab::ppo
