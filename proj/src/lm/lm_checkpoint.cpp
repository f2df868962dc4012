#include "vvlab/lm/lm_checkpoint.hpp"

#include "vvlab/error.hpp"

namespace vvlab::lm {

io::Checkpoint to_checkpoint(const TransformerLM& model, const Tokenizer& tokenizer,
                             const nlohmann::json& provenance) {
  if (tokenizer.size() != model.config().vocab_size) {
    throw ContractError("tokenizer has " + std::to_string(tokenizer.size()) +
                        " tokens, model expects " + std::to_string(model.config().vocab_size));
  }
  io::Checkpoint ckpt;
  ckpt.metadata = {{"kind", "lm"},
                   {"arch", model.config().to_json()},
                   {"tokenizer_hash", tokenizer.hash()},
                   {"vocab", tokenizer.tokens()},
                   {"provenance", provenance}};
  for (const auto& [name, tensor] : model.named_parameters()) ckpt.tensors[name] = *tensor;
  return ckpt;
}

void save_lm(const std::filesystem::path& path, const TransformerLM& model,
             const Tokenizer& tokenizer, const nlohmann::json& provenance) {
  to_checkpoint(model, tokenizer, provenance).save(path);
}

void require_kind(const io::Checkpoint& ckpt, const std::string& kind) {
  const std::string found =
      ckpt.metadata.is_object() ? ckpt.metadata.value("kind", std::string()) : std::string();
  if (found != kind) {
    throw io::CheckpointError(io::CheckpointErrc::kArchitectureMismatch,
                              "expected a '" + kind + "' checkpoint, found '" + found + "'");
  }
}

LoadedLm from_checkpoint(const io::Checkpoint& ckpt, const std::optional<Tokenizer>& vocab) {
  require_kind(ckpt, "lm");
  if (!ckpt.metadata.contains("arch")) {
    throw io::CheckpointError(io::CheckpointErrc::kArchitectureMismatch, "no arch metadata");
  }
  const ModelConfig cfg = ModelConfig::from_json(ckpt.metadata["arch"]);

  std::optional<Tokenizer> embedded;
  if (ckpt.metadata.contains("vocab")) {
    try {
      embedded = Tokenizer::from_tokens(ckpt.metadata["vocab"].get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      throw io::CheckpointError(io::CheckpointErrc::kMalformedHeader, e.what());
    }
  }
  if (!embedded && !vocab) {
    throw ValidationError("checkpoint has no vocabulary; pass a vocab file");
  }
  Tokenizer tokenizer = embedded ? *embedded : *vocab;
  if (embedded && vocab && embedded->hash() != vocab->hash()) {
    throw ValidationError("tokenizer mismatch: checkpoint " + embedded->hash() + " vs vocab " +
                          vocab->hash());
  }
  if (ckpt.metadata.contains("tokenizer_hash") &&
      ckpt.metadata["tokenizer_hash"].get<std::string>() != tokenizer.hash()) {
    throw ValidationError("tokenizer mismatch: checkpoint records " +
                          ckpt.metadata["tokenizer_hash"].get<std::string>() + ", vocab is " +
                          tokenizer.hash());
  }
  if (tokenizer.size() != cfg.vocab_size) {
    throw io::CheckpointError(io::CheckpointErrc::kArchitectureMismatch,
                              "vocabulary of " + std::to_string(tokenizer.size()) +
                                  " tokens, architecture says " + std::to_string(cfg.vocab_size));
  }

  LoadedLm out{TransformerLM(cfg), std::move(tokenizer), ckpt.metadata};
  std::size_t used = 0;
  for (auto& [name, tensor] : out.model.named_parameters()) {
    *tensor = ckpt.require(name, tensor->shape());
    ++used;
  }
  if (used != ckpt.tensors.size()) {
    throw io::CheckpointError(io::CheckpointErrc::kArchitectureMismatch,
                              "checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                                  " tensors, architecture uses " + std::to_string(used));
  }
  return out;
}

LoadedLm load_lm(const std::filesystem::path& path, const std::optional<Tokenizer>& vocab) {
  return from_checkpoint(io::Checkpoint::load(path), vocab);
}

}  // namespace vvlab::lm
