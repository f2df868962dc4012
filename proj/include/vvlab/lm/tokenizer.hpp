#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vvlab::lm {

using TokenId = std::int32_t;

// Word-level, lowercasing tokenizer. Letters, digits and apostrophes form
// words; every other non-space character is a token of its own.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  // Ids after the specials go by frequency (descending), then token text.
  // Tokens seen fewer than `min_freq` times are left out and encode as UNK.
  static Tokenizer build(std::span<const std::string> corpus, std::size_t min_freq = 1);

  // Line i of a vocab file is token i. A vocabulary without the four specials
  // in front (an exported GPT-2 vocab, say) loads for decoding only.
  static Tokenizer from_tokens(std::vector<std::string> tokens);
  static Tokenizer parse(std::string_view vocab_file);
  static Tokenizer load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  // git blob hash of serialize().
  std::string hash() const;

  static std::vector<std::string> split(std::string_view text);

  std::vector<TokenId> encode(std::string_view text) const;
  // Tokens joined by single spaces.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t size() const { return tokens_.size(); }
  bool can_encode() const { return has_specials_; }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  bool has_specials_ = false;
};

}  // namespace vvlab::lm
