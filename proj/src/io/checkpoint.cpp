#include "vvlab/io/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <vector>

#include "vvlab/io/hash.hpp"

namespace vvlab::io {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'H', 'K'};
constexpr std::size_t kPreambleSize = 16;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(std::string_view bytes, std::size_t at) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return value;
}

void append_floats(std::string& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, values.data(), values.size() * 4);
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) dst[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
}

std::vector<float> read_floats(std::string_view bytes, std::size_t at, std::size_t count) {
  std::vector<float> out(count);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), bytes.data() + at, count * 4);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      out[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, at + 4 * i));
    }
  }
  return out;
}

}  // namespace

const char* to_string(CheckpointErrc code) {
  switch (code) {
    case CheckpointErrc::kIo: return "io_error";
    case CheckpointErrc::kBadMagic: return "bad_magic";
    case CheckpointErrc::kVersionMismatch: return "version_mismatch";
    case CheckpointErrc::kTruncated: return "truncated";
    case CheckpointErrc::kOverlap: return "overlapping_tensors";
    case CheckpointErrc::kMalformedHeader: return "malformed_header";
    case CheckpointErrc::kArchitectureMismatch: return "architecture_mismatch";
  }
  return "unknown";
}

std::string Checkpoint::serialize() const {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    if (tensor.empty()) throw ContractError("checkpoint tensor '" + name + "' is empty");
    header["tensors"][name] = {{"dtype", "f32"}, {"shape", tensor.shape()}, {"offset", offset}};
    offset += tensor.numel() * 4;
  }
  const std::string header_text = header.dump();
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& [name, tensor] : tensors) append_floats(out, tensor.data());
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrc::kBadMagic, "file does not start with MCHK");
  }
  if (bytes.size() < kPreambleSize) {
    throw CheckpointError(CheckpointErrc::kTruncated, "file shorter than the preamble");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kVersion) {
    throw CheckpointError(CheckpointErrc::kVersionMismatch,
                          "format version " + std::to_string(version) + ", expected " +
                              std::to_string(kVersion));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPreambleSize) {
    throw CheckpointError(CheckpointErrc::kTruncated, "header extends past end of file");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPreambleSize, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrc::kMalformedHeader, e.what());
  }
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_object()) {
    throw CheckpointError(CheckpointErrc::kMalformedHeader, "header lacks a tensors object");
  }

  const std::size_t payload_start = kPreambleSize + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  struct Extent {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Extent> extents;
  Checkpoint ckpt;
  if (header.contains("metadata")) ckpt.metadata = header["metadata"];
  try {
    for (const auto& [name, info] : header["tensors"].items()) {
      if (info.value("dtype", "") != "f32") {
        throw CheckpointError(CheckpointErrc::kMalformedHeader,
                              "tensor '" + name + "' has unsupported dtype");
      }
      const auto shape = info.at("shape").get<Shape>();
      const auto offset = info.at("offset").get<std::uint64_t>();
      if (shape.empty() || std::find(shape.begin(), shape.end(), 0) != shape.end()) {
        throw CheckpointError(CheckpointErrc::kMalformedHeader,
                              "tensor '" + name + "' has an invalid shape");
      }
      const std::uint64_t nbytes = shape_numel(shape) * 4;
      if (offset > payload_size || nbytes > payload_size - offset) {
        throw CheckpointError(CheckpointErrc::kTruncated,
                              "tensor '" + name + "' extends past end of payload");
      }
      extents.push_back({offset, offset + nbytes, name});
      ckpt.tensors.emplace(name, Tensor(shape, read_floats(bytes, payload_start + offset,
                                                           shape_numel(shape))));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrc::kMalformedHeader, e.what());
  }
  std::sort(extents.begin(), extents.end(),
            [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].begin < extents[i - 1].end) {
      throw CheckpointError(CheckpointErrc::kOverlap, "tensors '" + extents[i - 1].name +
                                                          "' and '" + extents[i].name +
                                                          "' overlap");
    }
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const ValidationError& e) {
    throw CheckpointError(CheckpointErrc::kIo, e.what());
  }
  return deserialize(bytes);
}

const Tensor& Checkpoint::require(const std::string& name, const Shape& shape) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw CheckpointError(CheckpointErrc::kArchitectureMismatch, "missing tensor '" + name + "'");
  }
  if (it->second.shape() != shape) {
    throw CheckpointError(CheckpointErrc::kArchitectureMismatch,
                          "tensor '" + name + "' has shape " +
                              shape_to_string(it->second.shape()) + ", expected " +
                              shape_to_string(shape));
  }
  return it->second;
}

}  // namespace vvlab::io
