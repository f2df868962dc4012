#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>

namespace vvlab::io {

// Plain-text "key = value" configuration. '#' starts a comment; blank lines
// are ignored; keys are unique.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  // Sorted "key=value" lines.
  std::string format() const;

  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, std::string fallback) const;

  // Throws ValidationError naming the first key not in `known`.
  void require_known(std::span<const std::string_view> known) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace vvlab::io
