#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dataforge::detail {

/// Unique sibling name for temp+rename writes.
std::filesystem::path temp_sibling(const std::filesystem::path& target);

/// Writes to a temp sibling, fsyncs, renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace dataforge::detail
