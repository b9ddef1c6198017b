// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace kbgate::text {

/// Lower-cases ASCII letters, deletes ASCII punctuation and collapses runs of
/// whitespace to one space (trimmed). Non-ASCII bytes pass through.
std::string normalize(std::string_view s);

/// normalize() then split on single spaces.
std::vector<std::string> tokens(std::string_view s);

std::string_view trim(std::string_view s);

/// Number of Unicode code points in a UTF-8 string (invalid bytes count as one).
std::size_t utf8_length(std::string_view s);

/// Replaces every occurrence of `from` with `to`.
std::string replace_all(std::string s, std::string_view from, std::string_view to);

}  // namespace kbgate::text
