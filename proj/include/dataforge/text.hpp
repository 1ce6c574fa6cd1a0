#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dataforge::text {

/// Identifier persisted in index files so queries reuse the same rule.
inline constexpr std::string_view kTokenizerVersion = "alnum-lower/1";

/// Unicode lowercase, split on non-alphanumeric code points, drop empties.
/// Classification and case mapping follow the C.UTF-8 locale tables.
std::vector<std::string> tokenize(std::string_view text);

std::string to_lower(std::string_view text);
/// Number of code points in valid UTF-8.
std::size_t codepoint_count(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace dataforge::text
