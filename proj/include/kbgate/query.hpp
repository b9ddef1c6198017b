// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace kbgate {

/// An image attached to a query: either a URI (http(s), file:// or a local
/// path) or inline base64 bytes with a media type.
struct ImageRef {
    std::string uri;
    std::string inline_base64;
    std::string media_type;

    bool is_inline() const { return uri.empty(); }
    bool is_remote() const;
    /// Local filesystem path for file:// URIs and bare paths.
    std::optional<std::filesystem::path> local_path() const;

    /// Raw bytes for inline or local images. Throws IngestionError.
    std::string read_bytes() const;
    /// SHA-256 of the image content; remote URLs hash the URL itself.
    std::string content_hash() const;
    /// A URL usable in a chat request (remote URL or data: URL).
    std::string to_request_url() const;
    /// Short printable reference for flattened prompts.
    std::string display() const;

    static ImageRef from_uri(std::string uri) { return ImageRef{std::move(uri), {}, {}}; }
    static ImageRef from_inline(std::string base64, std::string media_type) {
        return ImageRef{{}, std::move(base64), std::move(media_type)};
    }

    friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

void to_json(nlohmann::json& j, const ImageRef& image);
void from_json(const nlohmann::json& j, ImageRef& image);

/// One VQA item.
struct QueryRecord {
    std::string id;
    std::string source;
    std::string text;
    std::vector<ImageRef> images;
    std::string gold_answer;
    std::optional<std::string> gold_query;
    std::optional<bool> human_label;

    bool has_content() const { return !text.empty() || !images.empty(); }
    /// Throws ValidationError / IngestionError.
    void validate() const;
};

void to_json(nlohmann::json& j, const QueryRecord& q);
void from_json(const nlohmann::json& j, QueryRecord& q);

/// Reads a JSONL query file. Relative image paths resolve against the file's
/// directory. Rejects duplicate ids and invalid records.
std::vector<QueryRecord> load_queries(const std::filesystem::path& path);

void write_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& queries);

}  // namespace kbgate
