// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace kbgate {

/// Lower-case hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents. Throws IngestionError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
/// Throws ParseError on malformed input.
std::string base64_decode(std::string_view text);

/// First 16 hex digits of a digest read as an integer; used to derive
/// deterministic pseudo-random values from cache keys.
std::uint64_t digest_prefix(std::string_view hex_digest);

}  // namespace kbgate
