#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "vvlab/io/checkpoint.hpp"
#include "vvlab/lm/model.hpp"
#include "vvlab/lm/tokenizer.hpp"

namespace vvlab::lm {

struct LoadedLm {
  TransformerLM model;
  Tokenizer tokenizer;
  nlohmann::json metadata;
};

// Metadata: kind "lm", arch, tokenizer_hash, vocab, provenance.
io::Checkpoint to_checkpoint(const TransformerLM& model, const Tokenizer& tokenizer,
                             const nlohmann::json& provenance = nlohmann::json::object());
void save_lm(const std::filesystem::path& path, const TransformerLM& model,
             const Tokenizer& tokenizer,
             const nlohmann::json& provenance = nlohmann::json::object());

// Validates kind, architecture and every tensor shape. A checkpoint without
// an embedded vocabulary (an exported GPT-2, say) needs `vocab`; when both
// exist their hashes must agree.
LoadedLm from_checkpoint(const io::Checkpoint& ckpt,
                         const std::optional<Tokenizer>& vocab = std::nullopt);
LoadedLm load_lm(const std::filesystem::path& path,
                 const std::optional<Tokenizer>& vocab = std::nullopt);

// Throws ValidationError unless the checkpoint's kind matches.
void require_kind(const io::Checkpoint& ckpt, const std::string& kind);

}  // namespace vvlab::lm
