#include "vvlab/reward/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vvlab/autodiff/ops.hpp"
#include "vvlab/autodiff/optim.hpp"
#include "vvlab/autodiff/rng.hpp"
#include "vvlab/error.hpp"

namespace vvlab::reward {

SentimentClassifier::SentimentClassifier(std::size_t vocab_size, std::size_t dim)
    : embedding_({vocab_size, dim}), weight_({dim, 1}), bias_({1}) {}

SentimentClassifier SentimentClassifier::initialized(std::size_t vocab_size, std::size_t dim,
                                                     std::uint64_t seed) {
  SentimentClassifier c(vocab_size, dim);
  Rng rng(seed);
  for (float& v : c.embedding_.data()) v = static_cast<float>(0.1 * rng.normal());
  for (float& v : c.weight_.data()) v = static_cast<float>(0.1 * rng.normal());
  return c;
}

ad::Var<float> SentimentClassifier::logits(ad::Tape<float>& tape,
                                           std::span<const std::vector<TokenId>> sequences,
                                           std::vector<ad::Var<float>>* leaves) const {
  std::vector<TokenId> flat;
  std::vector<ad::Segment> segments;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ContractError("classifier: empty sequence");
    for (TokenId id : seq) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
        throw IndexError("classifier: token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(vocab_size()));
      }
    }
    segments.push_back({flat.size(), seq.size()});
    flat.insert(flat.end(), seq.begin(), seq.end());
  }
  if (segments.empty()) throw ContractError("classifier: empty batch");
  const ad::Var<float> e = tape.parameter(embedding_);
  const ad::Var<float> w = tape.parameter(weight_);
  const ad::Var<float> b = tape.parameter(bias_);
  if (leaves != nullptr) *leaves = {e, w, b};
  const ad::Var<float> pooled =
      ad::segment_mean(ad::gather_rows(e, std::span<const TokenId>(flat)),
                       std::span<const ad::Segment>(segments));
  return ad::reshape(ad::add_bias(ad::matmul(pooled, w), b), {segments.size()});
}

std::vector<double> SentimentClassifier::score_batch(
    std::span<const std::vector<TokenId>> sequences) const {
  ad::Tape<float> tape(false);
  const Tensor z = logits(tape, sequences).value();
  std::vector<double> out(z.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-double(z[i])));
  return out;
}

double SentimentClassifier::score(std::span<const TokenId> tokens) const {
  const std::vector<std::vector<TokenId>> one = {{tokens.begin(), tokens.end()}};
  return score_batch(one)[0];
}

io::Checkpoint SentimentClassifier::to_checkpoint(const lm::Tokenizer& tokenizer) const {
  if (tokenizer.size() != vocab_size()) {
    throw ContractError("classifier vocabulary does not match the tokenizer");
  }
  io::Checkpoint ckpt;
  ckpt.metadata = {{"kind", "classifier"},
                   {"arch", {{"vocab_size", vocab_size()}, {"dim", dim()}}},
                   {"tokenizer_hash", tokenizer.hash()}};
  ckpt.tensors["embedding"] = embedding_;
  ckpt.tensors["head.weight"] = weight_;
  ckpt.tensors["head.bias"] = bias_;
  return ckpt;
}

SentimentClassifier SentimentClassifier::from_checkpoint(const io::Checkpoint& ckpt,
                                                         std::string* tokenizer_hash) {
  if (ckpt.metadata.value("kind", std::string()) != "classifier") {
    throw io::CheckpointError(io::CheckpointErrc::kArchitectureMismatch,
                              "expected a 'classifier' checkpoint");
  }
  std::size_t vocab = 0, dim = 0;
  try {
    vocab = ckpt.metadata.at("arch").at("vocab_size").get<std::size_t>();
    dim = ckpt.metadata.at("arch").at("dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw io::CheckpointError(io::CheckpointErrc::kMalformedHeader, e.what());
  }
  if (vocab == 0 || dim == 0) {
    throw io::CheckpointError(io::CheckpointErrc::kMalformedHeader, "empty classifier");
  }
  SentimentClassifier c(vocab, dim);
  c.embedding_ = ckpt.require("embedding", {vocab, dim});
  c.weight_ = ckpt.require("head.weight", {dim, 1});
  c.bias_ = ckpt.require("head.bias", {1});
  if (ckpt.tensors.size() != 3) {
    throw io::CheckpointError(io::CheckpointErrc::kArchitectureMismatch,
                              "unexpected tensors in classifier checkpoint");
  }
  if (tokenizer_hash != nullptr) *tokenizer_hash = ckpt.metadata.value("tokenizer_hash", "");
  return c;
}

namespace {

double accuracy(const SentimentClassifier& c, std::span<const std::vector<TokenId>> seqs,
                std::span<const float> labels) {
  if (seqs.empty()) return 0.0;
  const auto scores = c.score_batch(seqs);
  std::size_t right = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) right += (scores[i] > 0.5) == (labels[i] > 0.5f);
  return static_cast<double>(right) / static_cast<double>(seqs.size());
}

}  // namespace

SentimentClassifier train_classifier(std::span<const io::LabeledSentence> corpus,
                                     const lm::Tokenizer& tokenizer,
                                     const ClassifierTrainConfig& config,
                                     ClassifierReport* report) {
  const auto n_pos = std::count_if(corpus.begin(), corpus.end(), [](const auto& l) {
    return l.label == io::Sentiment::kPositive;
  });
  if (n_pos == 0 || static_cast<std::size_t>(n_pos) == corpus.size()) {
    throw ValidationError("train_classifier: corpus needs both labels");
  }
  if (config.batch_size == 0) throw ContractError("train_classifier: batch_size must be positive");

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(config.seed, 0x73706c6974ULL));
  split_rng.shuffle(order.begin(), order.end());
  const auto n_heldout = static_cast<std::size_t>(config.heldout_fraction * corpus.size());
  std::vector<std::vector<TokenId>> train, heldout;
  std::vector<float> train_y, heldout_y;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& line = corpus[order[i]];
    std::vector<TokenId> ids = tokenizer.encode(line.text);
    if (ids.empty()) ids.push_back(lm::Tokenizer::kUnk);
    const float y = line.label == io::Sentiment::kPositive ? 1.f : 0.f;
    if (i < n_heldout) {
      heldout.push_back(std::move(ids));
      heldout_y.push_back(y);
    } else {
      train.push_back(std::move(ids));
      train_y.push_back(y);
    }
  }

  SentimentClassifier c = SentimentClassifier::initialized(tokenizer.size(), config.dim,
                                                           derive_seed(config.seed, 0x696e6974ULL));
  Adam<float> opt(c.parameters(), AdamConfig{config.lr});
  ClassifierReport local;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> perm(train.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(config.seed, 0x65706f6368ULL, epoch));
    rng.shuffle(perm.begin(), perm.end());
    for (std::size_t b = 0; b < perm.size(); b += config.batch_size) {
      const std::size_t e = std::min(perm.size(), b + config.batch_size);
      std::vector<std::vector<TokenId>> seqs;
      std::vector<float> ys;
      for (std::size_t i = b; i < e; ++i) {
        seqs.push_back(train[perm[i]]);
        ys.push_back(train_y[perm[i]]);
      }
      ad::Tape<float> tape;
      std::vector<ad::Var<float>> leaves;
      const auto loss = ad::bce_with_logits(c.logits(tape, seqs, &leaves),
                                            std::span<const float>(ys));
      tape.backward(loss);
      std::vector<const Tensor*> grads;
      for (const auto& v : leaves) grads.push_back(tape.grad(v));
      opt.step(grads);
      local.loss_curve.push_back(loss.value().item());
    }
  }
  local.train_accuracy = accuracy(c, train, train_y);
  local.heldout_accuracy = accuracy(c, heldout, heldout_y);
  if (report != nullptr) *report = std::move(local);
  return c;
}

std::vector<TokenId> strip_framing(std::span<const TokenId> tokens) {
  std::vector<TokenId> out;
  for (TokenId id : tokens) {
    if (id != lm::Tokenizer::kBos && id != lm::Tokenizer::kEos && id != lm::Tokenizer::kPad) {
      out.push_back(id);
    }
  }
  return out;
}

}  // namespace vvlab::reward
