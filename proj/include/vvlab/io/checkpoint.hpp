#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "json.hpp"
#include "vvlab/autodiff/tensor.hpp"
#include "vvlab/error.hpp"

namespace vvlab::io {

enum class CheckpointErrc {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kOverlap,
  kMalformedHeader,
  kArchitectureMismatch,
};

const char* to_string(CheckpointErrc code);

class CheckpointError : public ValidationError {
 public:
  CheckpointError(CheckpointErrc code, const std::string& message)
      : ValidationError(std::string(to_string(code)) + ": " + message), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

// MCHK container: a JSON header naming every tensor plus a raw payload of
// little-endian float32 values.
//
//   bytes 0..3    "MCHK"
//   bytes 4..7    format version, uint32 LE
//   bytes 8..15   header length H, uint64 LE
//   bytes 16..    H bytes of UTF-8 JSON:
//                 {"metadata": {...},
//                  "tensors": {name: {"dtype": "f32", "shape": [...], "offset": n}}}
//   then          payload; `offset` counts bytes from the payload start
//
// Tensors are laid out contiguously in name order, so equal checkpoints
// serialize to identical bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  // Throws kArchitectureMismatch when the tensor is absent or misshapen.
  const Tensor& require(const std::string& name, const Shape& shape) const;
};

}  // namespace vvlab::io
