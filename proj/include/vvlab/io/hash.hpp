#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace vvlab::io {

// Hex SHA-1 of "blob <size>\0<content>", the same id `git hash-object` gives.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames it over `path`, so a
// reader never observes a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace vvlab::io
