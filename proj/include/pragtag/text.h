#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pragtag::text {

std::string to_lower_ascii(std::string_view s);
bool is_ascii_space(char c);
bool is_ascii_punct(char c);

/// Removes leading and trailing ASCII punctuation.
std::string_view strip_punct(std::string_view s);

bool is_valid_utf8(std::string_view s);

/// Collapses every run of whitespace into one space and trims the ends.
std::string normalize_whitespace(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool contains_ci(std::string_view haystack, std::string_view needle);

/// Curly quotes, en and em dashes and the ellipsis folded to ASCII.
std::string fold_typography(std::string_view s);

}  // namespace pragtag::text
