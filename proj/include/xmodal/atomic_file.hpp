#pragma once

#include <filesystem>
#include <string_view>

namespace xmodal {

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partially written file.
void write_file_atomically(const std::filesystem::path& path, std::string_view bytes);

/// Reads a whole file into memory. Throws Error(IoFailure) when unreadable.
std::string read_file(const std::filesystem::path& path);

}  // namespace xmodal
