#include <gtest/gtest.h>

#include <algorithm>

#include "vvlab/autodiff/rng.hpp"
#include "vvlab/error.hpp"
#include "vvlab/reward/classifier.hpp"

namespace vvlab::reward {
namespace {

class TrainedClassifier : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    io::CorpusOptions opts;
    opts.n_sentences = 2000;
    corpus_ = new io::SyntheticCorpus(io::generate_corpus(opts));
    std::vector<std::string> lines;
    for (const auto& l : corpus_->lines) lines.push_back(l.text);
    tokenizer_ = new lm::Tokenizer(lm::Tokenizer::build(lines));
    report_ = new ClassifierReport;
    classifier_ = new SentimentClassifier(
        train_classifier(corpus_->lines, *tokenizer_, ClassifierTrainConfig{}, report_));
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete tokenizer_;
    delete report_;
    delete classifier_;
  }
  static io::SyntheticCorpus* corpus_;
  static lm::Tokenizer* tokenizer_;
  static ClassifierReport* report_;
  static SentimentClassifier* classifier_;
};
io::SyntheticCorpus* TrainedClassifier::corpus_ = nullptr;
lm::Tokenizer* TrainedClassifier::tokenizer_ = nullptr;
ClassifierReport* TrainedClassifier::report_ = nullptr;
SentimentClassifier* TrainedClassifier::classifier_ = nullptr;

TEST_F(TrainedClassifier, HeldoutAccuracyIsHigh) {
  EXPECT_GE(report_->heldout_accuracy, 0.95);
  EXPECT_LT(report_->loss_curve.back(), report_->loss_curve.front());
}

TEST_F(TrainedClassifier, LexiconSentencesScoreAtTheExtremes) {
  std::string pos = "the film was", neg = "the film was";
  for (std::size_t i = 0; i < 3; ++i) {
    pos += " " + std::string(io::positive_lexicon()[i]);
    neg += " " + std::string(io::negative_lexicon()[i]);
  }
  EXPECT_GT(classifier_->score(tokenizer_->encode(pos)), 0.9);
  EXPECT_LT(classifier_->score(tokenizer_->encode(neg)), 0.1);
}

TEST_F(TrainedClassifier, ScoreIsPermutationInvariant) {
  auto ids = tokenizer_->encode(corpus_->lines[0].text);
  const double base = classifier_->score(ids);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    rng.shuffle(ids.begin(), ids.end());
    EXPECT_NEAR(classifier_->score(ids), base, 1e-6);
  }
}

TEST_F(TrainedClassifier, ScoringIsPure) {
  const auto ids = tokenizer_->encode(corpus_->lines[1].text);
  const auto ckpt = classifier_->to_checkpoint(*tokenizer_).serialize();
  const double a = classifier_->score(ids);
  EXPECT_EQ(a, classifier_->score(ids));
  EXPECT_EQ(ckpt, classifier_->to_checkpoint(*tokenizer_).serialize());
}

TEST_F(TrainedClassifier, TrainingIsDeterministic) {
  ClassifierTrainConfig cfg;
  cfg.epochs = 1;
  const auto a = train_classifier(corpus_->lines, *tokenizer_, cfg);
  const auto b = train_classifier(corpus_->lines, *tokenizer_, cfg);
  EXPECT_EQ(a.to_checkpoint(*tokenizer_).serialize(), b.to_checkpoint(*tokenizer_).serialize());
}

TEST_F(TrainedClassifier, CheckpointRoundTrip) {
  const auto ckpt = classifier_->to_checkpoint(*tokenizer_);
  std::string hash;
  const auto back =
      SentimentClassifier::from_checkpoint(io::Checkpoint::deserialize(ckpt.serialize()), &hash);
  EXPECT_EQ(hash, tokenizer_->hash());
  const auto ids = tokenizer_->encode("what a great movie .");
  EXPECT_EQ(back.score(ids), classifier_->score(ids));
}

TEST(Classifier, AllPadIsNeutralAtInit) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto c = SentimentClassifier::initialized(50, 16, s);
    EXPECT_NEAR(c.score(std::vector<TokenId>(5, lm::Tokenizer::kPad)), 0.5, 0.1);
  }
}

TEST(Classifier, Errors) {
  const auto c = SentimentClassifier::initialized(10, 4, 1);
  EXPECT_THROW(c.score(std::vector<TokenId>{}), ContractError);
  EXPECT_THROW(c.score(std::vector<TokenId>{10}), IndexError);
  const lm::Tokenizer tok = lm::Tokenizer::build(std::vector<std::string>{"a b"});
  const std::vector<io::LabeledSentence> one_class = {{io::Sentiment::kPositive, "a"},
                                                      {io::Sentiment::kPositive, "b"}};
  EXPECT_THROW(train_classifier(one_class, tok, ClassifierTrainConfig{}), ValidationError);
}

TEST(Classifier, StripFramingDropsSpecials) {
  EXPECT_EQ(strip_framing(std::vector<TokenId>{1, 5, 6, 2, 0}), (std::vector<TokenId>{5, 6}));
}

}  // namespace
}  // namespace vvlab::reward
