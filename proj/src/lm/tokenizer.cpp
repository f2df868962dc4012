#include "vvlab/lm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "vvlab/error.hpp"
#include "vvlab/io/hash.hpp"

namespace vvlab::lm {

namespace {

constexpr std::string_view kSpecialNames[Tokenizer::kNumSpecials] = {"<pad>", "<bos>", "<eos>",
                                                                     "<unk>"};

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }

}  // namespace

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (c == '<') {
      // Special tokens survive a decode/encode round trip.
      bool matched = false;
      for (std::string_view name : kSpecialNames) {
        if (text.substr(i, name.size()) == name) {
          out.emplace_back(name);
          i += name.size();
          matched = true;
          break;
        }
      }
      if (!matched) out.emplace_back(1, text[i++]);
    } else if (is_word_char(c)) {
      std::string word;
      while (i < text.size() && is_word_char(static_cast<unsigned char>(text[i]))) {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
        ++i;
      }
      out.push_back(std::move(word));
    } else {
      out.emplace_back(1, text[i++]);
    }
  }
  return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> corpus, std::size_t min_freq) {
  if (corpus.empty()) throw ValidationError("build_tokenizer: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const std::string& line : corpus) {
    for (std::string& tok : split(line)) ++counts[std::move(tok)];
  }
  for (std::string_view name : kSpecialNames) counts.erase(std::string(name));
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) ranked.emplace_back(tok, n);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens(std::begin(kSpecialNames), std::end(kSpecialNames));
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return from_tokens(std::move(tokens));
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty()) throw ValidationError("vocabulary is empty");
  Tokenizer t;
  t.tokens_ = std::move(tokens);
  t.has_specials_ = t.tokens_.size() > kNumSpecials;
  for (std::size_t i = 0; i < kNumSpecials && i < t.tokens_.size(); ++i) {
    if (t.tokens_[i] != kSpecialNames[i]) t.has_specials_ = false;
  }
  for (std::size_t i = 0; i < t.tokens_.size(); ++i) {
    // First occurrence wins for lookup; exported vocabularies may repeat a rendering.
    t.ids_.emplace(t.tokens_[i], static_cast<TokenId>(i));
  }
  return t;
}

Tokenizer Tokenizer::parse(std::string_view vocab_file) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < vocab_file.size()) {
    std::size_t end = vocab_file.find('\n', pos);
    if (end == std::string_view::npos) end = vocab_file.size();
    tokens.emplace_back(vocab_file.substr(pos, end - pos));
    pos = end + 1;
  }
  return from_tokens(std::move(tokens));
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) { return parse(io::read_file(path)); }

std::string Tokenizer::serialize() const {
  std::string out;
  for (const std::string& tok : tokens_) {
    out += tok;
    out += '\n';
  }
  return out;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, serialize());
}

std::string Tokenizer::hash() const { return io::git_blob_hash(serialize()); }

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  if (!has_specials_) {
    throw ValidationError("this vocabulary is decode-only; supply pre-tokenized ids");
  }
  std::vector<TokenId> ids;
  for (const std::string& tok : split(text)) {
    auto it = ids_.find(tok);
    ids.push_back(it == ids_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

const std::string& Tokenizer::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Tokenizer::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

}  // namespace vvlab::lm
