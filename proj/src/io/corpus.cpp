#include "vvlab/io/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <set>
#include <sstream>

#include "vvlab/autodiff/rng.hpp"
#include "vvlab/error.hpp"
#include "vvlab/io/hash.hpp"

namespace vvlab::io {

namespace {

constexpr std::array<std::string_view, 32> kPositive = {
    "good",      "great",     "excellent",  "wonderful",   "brilliant", "superb",
    "delightful", "charming", "moving",     "beautiful",   "enjoyable", "fantastic",
    "amazing",   "touching",  "clever",     "fun",         "stunning",  "masterful",
    "gripping",  "lovely",    "funny",      "perfect",     "memorable", "inspiring",
    "impressive", "refreshing", "outstanding", "heartfelt", "powerful", "uplifting",
    "captivating", "magnificent"};

constexpr std::array<std::string_view, 32> kNegative = {
    "bad",        "terrible",   "awful",      "boring",      "dull",       "horrible",
    "useless",    "mediocre",   "worthless",  "disastrous",  "horrendous", "problematic",
    "poor",       "weak",       "tedious",    "bland",       "lame",       "painful",
    "annoying",   "pointless",  "dreadful",   "forgettable", "clumsy",     "messy",
    "shallow",    "stupid",     "ugly",       "unwatchable", "lifeless",   "disappointing",
    "incoherent", "miserable"};

constexpr std::array<std::string_view, 16> kNouns = {
    "film",     "movie",    "plot",     "story",    "acting",   "script",
    "ending",   "cast",     "soundtrack", "dialogue", "director", "cinematography",
    "pacing",   "sequel",   "premise",  "performance"};

constexpr std::array<std::string_view, 6> kDegrees = {"really", "very", "quite",
                                                      "truly",  "rather", "so"};

// {N} noun, {A} adjective, {DA} optional degree adverb then adjective.
constexpr std::array<std::string_view, 8> kTemplates = {
    "the {N} was {DA} and {DA} .",
    "this {N} is {DA} .",
    "i thought the {N} was {DA} , and the {N} was {DA} .",
    "what a {A} {N} .",
    "honestly the {N} felt {DA} .",
    "the {N} and the {N} were {DA} .",
    "overall it was a {DA} {N} , truly {A} .",
    "my friends said the {N} was {DA} ."};

std::vector<std::string> split_spaces(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

template <typename Seq>
std::string_view pick(Rng& rng, const Seq& items) {
  return items[rng.below(items.size())];
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string render_sentence(Rng& rng, std::string_view tmpl, Sentiment label) {
  const auto& lexicon = label == Sentiment::kPositive ? kPositive : kNegative;
  std::vector<std::string> words;
  for (const std::string& piece : split_spaces(tmpl)) {
    if (piece == "{N}") {
      words.emplace_back(pick(rng, kNouns));
    } else if (piece == "{A}") {
      words.emplace_back(pick(rng, lexicon));
    } else if (piece == "{DA}") {
      if (rng.below(2) == 0) words.emplace_back(pick(rng, kDegrees));
      words.emplace_back(pick(rng, lexicon));
    } else {
      words.push_back(piece);
    }
  }
  return join(words);
}

// Every distinct prefix that ends right before the first sentiment slot.
std::vector<std::string> all_prompt_prefixes() {
  std::set<std::string> prefixes;
  for (std::string_view tmpl : kTemplates) {
    const std::vector<std::string> pieces = split_spaces(tmpl);
    std::vector<std::vector<std::string>> partial = {{}};
    for (const std::string& piece : pieces) {
      if (piece == "{A}") {
        for (auto& p : partial) prefixes.insert(join(p));
        break;
      }
      if (piece == "{DA}") {
        for (auto& p : partial) {
          prefixes.insert(join(p));
          for (std::string_view deg : kDegrees) {
            auto q = p;
            q.emplace_back(deg);
            prefixes.insert(join(q));
          }
        }
        break;
      }
      std::vector<std::vector<std::string>> next;
      if (piece == "{N}") {
        for (auto& p : partial) {
          for (std::string_view noun : kNouns) {
            auto q = p;
            q.emplace_back(noun);
            next.push_back(std::move(q));
          }
        }
      } else {
        for (auto& p : partial) {
          p.push_back(piece);
          next.push_back(std::move(p));
        }
      }
      partial = std::move(next);
    }
  }
  return {prefixes.begin(), prefixes.end()};
}

}  // namespace

std::span<const std::string_view> positive_lexicon() { return kPositive; }
std::span<const std::string_view> negative_lexicon() { return kNegative; }

SyntheticCorpus generate_corpus(const CorpusOptions& options) {
  if (options.n_sentences < 2) throw ContractError("generate_corpus: need at least 2 sentences");
  SyntheticCorpus corpus;
  corpus.seed = options.seed;
  corpus.lexicon_version = kLexiconVersion;

  Rng rng(derive_seed(options.seed, 0x636f72707573ULL));
  std::vector<Sentiment> labels;
  labels.reserve(options.n_sentences);
  const std::size_t n_neg = options.n_sentences / 2;
  for (std::size_t i = 0; i < options.n_sentences; ++i) {
    labels.push_back(i < n_neg ? Sentiment::kNegative : Sentiment::kPositive);
  }
  rng.shuffle(labels.begin(), labels.end());
  for (Sentiment label : labels) {
    corpus.lines.push_back({label, render_sentence(rng, pick(rng, kTemplates), label)});
  }

  std::vector<std::string> prefixes = all_prompt_prefixes();
  Rng prompt_rng(derive_seed(options.seed, 0x70726f6d707473ULL));
  prompt_rng.shuffle(prefixes.begin(), prefixes.end());
  if (options.n_prompts + options.n_heldout_prompts > prefixes.size()) {
    throw ContractError("generate_corpus: only " + std::to_string(prefixes.size()) +
                        " distinct prompts available");
  }
  corpus.prompts.assign(prefixes.begin(), prefixes.begin() + options.n_prompts);
  corpus.heldout_prompts.assign(prefixes.begin() + options.n_prompts,
                                prefixes.begin() + options.n_prompts + options.n_heldout_prompts);
  return corpus;
}

std::string format_corpus_tsv(std::span<const LabeledSentence> lines) {
  std::string out;
  for (const LabeledSentence& line : lines) {
    out += line.label == Sentiment::kPositive ? '1' : '0';
    out += '\t';
    out += line.text;
    out += '\n';
  }
  return out;
}

std::vector<LabeledSentence> parse_corpus_tsv(std::string_view text) {
  std::vector<LabeledSentence> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.size() < 3 || (line[0] != '0' && line[0] != '1') || line[1] != '\t') {
      throw ValidationError("corpus line " + std::to_string(line_no) +
                            ": expected '<0|1>\\t<sentence>'");
    }
    out.push_back({line[0] == '1' ? Sentiment::kPositive : Sentiment::kNegative,
                   std::string(line.substr(2))});
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const LabeledSentence> lines) {
  write_file_atomic(path, format_corpus_tsv(lines));
}

std::vector<LabeledSentence> read_corpus(const std::filesystem::path& path) {
  return parse_corpus_tsv(read_file(path));
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::string out;
  for (const std::string& line : lines) {
    out += line;
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::vector<std::int32_t>> parse_token_id_lines(std::string_view text) {
  std::vector<std::vector<std::int32_t>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    std::vector<std::int32_t> ids;
    for (const std::string& word : split_spaces(line)) {
      std::int32_t id = 0;
      auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), id);
      if (ec != std::errc() || ptr != word.data() + word.size() || id < 0) {
        throw ValidationError("token id line " + std::to_string(line_no) + ": '" + word +
                              "' is not a token id");
      }
      ids.push_back(id);
    }
    if (!ids.empty()) out.push_back(std::move(ids));
  }
  return out;
}

std::vector<std::vector<std::int32_t>> read_token_id_lines(const std::filesystem::path& path) {
  return parse_token_id_lines(read_file(path));
}

}  // namespace vvlab::io
