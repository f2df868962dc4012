#include "vvlab/interpret/probe.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "vvlab/error.hpp"
#include "vvlab/io/hash.hpp"
#include "vvlab/lm/forward.hpp"

namespace vvlab::interpret {

std::vector<std::vector<double>> sentence_representations(
    const lm::TransformerLM& model, std::span<const std::vector<lm::TokenId>> sequences,
    std::size_t batch_size) {
  std::vector<std::vector<double>> out;
  out.reserve(sequences.size());
  for (std::size_t b = 0; b < sequences.size(); b += batch_size) {
    const auto chunk = sequences.subspan(b, std::min(batch_size, sequences.size() - b));
    for (const auto& s : chunk) {
      if (s.empty()) throw ContractError("sentence_representation: empty sequence");
    }
    const lm::PackedBatch batch = lm::PackedBatch::pack(chunk);
    ad::Tape<float> tape(false);
    const auto bound = lm::bind(tape, model, false);
    const Tensor x = lm::residual_stream(bound, std::span<const lm::TokenId>(batch.tokens),
                                         std::span<const ad::Segment>(batch.segments))
                         .value();
    for (const ad::Segment& s : batch.segments) {
      std::vector<double> mean(x.cols(), 0.0);
      for (std::size_t t = 0; t < s.length; ++t) {
        const auto row = x.row(s.start + t);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
      }
      for (double& v : mean) v /= static_cast<double>(s.length);
      out.push_back(std::move(mean));
    }
  }
  return out;
}

std::vector<double> sentence_representation(const lm::TransformerLM& model,
                                            std::span<const lm::TokenId> tokens) {
  const std::vector<std::vector<lm::TokenId>> one = {{tokens.begin(), tokens.end()}};
  return sentence_representations(model, one)[0];
}

bool ProbeDirection::predicts_negative(std::span<const double> x) const {
  if (x.size() != w_neg.size()) throw ShapeError("probe: dimension mismatch");
  double z = bias;
  for (std::size_t j = 0; j < x.size(); ++j) z += w_neg[j] * x[j];
  return z > 0.0;
}

nlohmann::json ProbeDirection::to_json() const {
  return {{"dim", w_neg.size()},
          {"w_neg", w_neg},
          {"bias", bias},
          {"train_acc", train_accuracy},
          {"heldout_acc", heldout_accuracy}};
}

ProbeDirection ProbeDirection::from_json(const nlohmann::json& j) {
  ProbeDirection p;
  try {
    p.w_neg = j.at("w_neg").get<std::vector<double>>();
    p.bias = j.at("bias").get<double>();
    p.train_accuracy = j.value("train_acc", 0.0);
    p.heldout_accuracy = j.value("heldout_acc", 0.0);
    if (j.at("dim").get<std::size_t>() != p.w_neg.size()) {
      throw ValidationError("probe: dim does not match w_neg length");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("probe file: ") + e.what());
  }
  double norm = 0;
  for (double v : p.w_neg) norm += v * v;
  if (p.w_neg.empty() || std::abs(std::sqrt(norm) - 1.0) > 1e-6) {
    throw ValidationError("probe file: w_neg is not a unit vector");
  }
  return p;
}

void ProbeDirection::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, to_json().dump(2) + "\n");
}

ProbeDirection ProbeDirection::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("probe file: ") + e.what());
  }
}

namespace {

double accuracy(std::span<const ProbeSample* const> set, const ProbeDirection& p) {
  if (set.empty()) return 0.0;
  std::size_t right = 0;
  for (const ProbeSample* s : set) right += p.predicts_negative(s->x) == s->negative;
  return static_cast<double>(right) / static_cast<double>(set.size());
}

}  // namespace

ProbeDirection train_probe(std::span<const ProbeSample> samples, const ProbeConfig& config) {
  if (samples.empty()) throw ValidationError("train_probe: no samples");
  const std::size_t d = samples[0].x.size();
  if (d == 0) throw ValidationError("train_probe: empty representations");
  std::size_t n_neg = 0;
  for (const ProbeSample& s : samples) {
    if (s.x.size() != d) throw ValidationError("train_probe: representations differ in size");
    n_neg += s.negative;
  }
  if (n_neg == 0 || n_neg == samples.size()) {
    throw ValidationError("train_probe: both classes must be present");
  }

  // Split by distinct vector, numbered in order of first appearance.
  std::unordered_map<std::string, std::size_t> group_of;
  std::vector<const ProbeSample*> train, heldout;
  for (const ProbeSample& s : samples) {
    std::string key(reinterpret_cast<const char*>(s.x.data()), d * sizeof(double));
    const std::size_t g = group_of.try_emplace(std::move(key), group_of.size()).first->second;
    (g % 10 == 9 ? heldout : train).push_back(&s);
  }
  std::size_t train_neg = 0;
  for (const ProbeSample* s : train) train_neg += s->negative;
  if (train_neg == 0 || train_neg == train.size()) {
    throw ValidationError("train_probe: training split lacks a class");
  }

  // Whitened coordinates z = S (x - mu) with S = Lambda^-1/2 V^T from the
  // training covariance. Residual features are badly conditioned, and plain
  // gradient descent stalls along their low-variance directions.
  const double n = static_cast<double>(train.size());
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (const ProbeSample* s : train) mu += Eigen::Map<const Eigen::VectorXd>(s->x.data(), mu.size());
  mu /= n;
  Eigen::MatrixXd centered(static_cast<Eigen::Index>(train.size()), mu.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    centered.row(static_cast<Eigen::Index>(i)) =
        (Eigen::Map<const Eigen::VectorXd>(train[i]->x.data(), mu.size()) - mu).transpose();
  }
  const Eigen::MatrixXd cov = centered.transpose() * centered / n;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double floor = std::max(lambda.maxCoeff(), 0.0) * 1e-12;
  Eigen::VectorXd inv_sqrt(mu.size());
  for (Eigen::Index j = 0; j < mu.size(); ++j) {
    inv_sqrt[j] = lambda[j] > floor ? 1.0 / std::sqrt(lambda[j]) : 0.0;
  }
  const Eigen::MatrixXd whiten = inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::MatrixXd z = centered * whiten.transpose();

  Eigen::VectorXd w = Eigen::VectorXd::Zero(mu.size());
  double b = 0.0;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const Eigen::VectorXd logits = (z * w).array() + b;
    Eigen::VectorXd r(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      r[i] = 1.0 / (1.0 + std::exp(-logits[i])) - (train[static_cast<std::size_t>(i)]->negative ? 1.0 : 0.0);
    }
    const Eigen::VectorXd grad = z.transpose() * r / n + config.l2 * w;
    w -= config.lr * grad;
    b -= config.lr * r.sum() / n;
  }

  // Back to the original coordinates, then onto the unit sphere.
  const Eigen::VectorXd w_raw = whiten.transpose() * w;
  const double b_raw = b - w_raw.dot(mu);
  const double norm = w_raw.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DivergenceError("train_probe: degenerate weight vector");
  }
  ProbeDirection p;
  p.w_neg.resize(d);
  for (std::size_t j = 0; j < d; ++j) p.w_neg[j] = w_raw[static_cast<Eigen::Index>(j)] / norm;
  p.bias = b_raw / norm;
  p.train_accuracy = accuracy(train, p);
  p.heldout_accuracy = accuracy(heldout, p);
  return p;
}

}  // namespace vvlab::interpret
