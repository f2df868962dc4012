#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vvlab::io {

enum class Sentiment : int { kNegative = 0, kPositive = 1 };

struct LabeledSentence {
  Sentiment label = Sentiment::kNegative;
  std::string text;
};

struct CorpusOptions {
  std::uint64_t seed = 1;
  std::size_t n_sentences = 4000;
  std::size_t n_prompts = 256;
  std::size_t n_heldout_prompts = 128;
};

struct SyntheticCorpus {
  std::vector<LabeledSentence> lines;
  // Sentence prefixes that stop right before the first sentiment slot.
  std::vector<std::string> prompts;
  // Disjoint from `prompts`.
  std::vector<std::string> heldout_prompts;
  std::uint64_t seed = 0;
  int lexicon_version = 0;
};

inline constexpr int kLexiconVersion = 1;

std::span<const std::string_view> positive_lexicon();
std::span<const std::string_view> negative_lexicon();

// Template film-review sentences whose sentiment adjectives are all drawn
// from the lexicon of the sentence label. Labels are balanced: n/2 each for
// even n, one extra positive for odd n.
SyntheticCorpus generate_corpus(const CorpusOptions& options);

// Corpus file: UTF-8 lines "<0|1>\t<sentence>", 1 = positive.
std::string format_corpus_tsv(std::span<const LabeledSentence> lines);
std::vector<LabeledSentence> parse_corpus_tsv(std::string_view text);
void write_corpus(const std::filesystem::path& path, std::span<const LabeledSentence> lines);
std::vector<LabeledSentence> read_corpus(const std::filesystem::path& path);

// Prompt file: one prompt per line.
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Pre-tokenized prompts: one line of space-separated non-negative token ids
// per prompt; blank lines are skipped. Range checks are the model's job.
std::vector<std::vector<std::int32_t>> parse_token_id_lines(std::string_view text);
std::vector<std::vector<std::int32_t>> read_token_id_lines(const std::filesystem::path& path);

}  // namespace vvlab::io
