// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/query.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

bool ImageRef::is_remote() const {
    return !uri.empty() && (starts_with(uri, "http://") || starts_with(uri, "https://"));
}

std::optional<fs::path> ImageRef::local_path() const {
    if (uri.empty() || is_remote()) return std::nullopt;
    if (starts_with(uri, "file://")) return fs::path(uri.substr(7));
    if (starts_with(uri, "data:")) return std::nullopt;
    return fs::path(uri);
}

std::string ImageRef::read_bytes() const {
    if (is_inline()) {
        try {
            return base64_decode(inline_base64);
        } catch (const ParseError& e) {
            throw IngestionError(fmt::format("inline image: {}", e.what()));
        }
    }
    if (starts_with(uri, "data:")) {
        auto comma = uri.find(',');
        if (comma == std::string::npos) throw IngestionError("malformed data: URI");
        try {
            return base64_decode(std::string_view(uri).substr(comma + 1));
        } catch (const ParseError& e) {
            throw IngestionError(fmt::format("data: URI: {}", e.what()));
        }
    }
    auto path = local_path();
    if (!path) throw IngestionError(fmt::format("remote image {} has no local bytes", uri));
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw IngestionError(fmt::format("cannot read image {}", path->string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string ImageRef::content_hash() const {
    if (is_remote()) return sha256_hex("url:" + uri);
    return sha256_hex(read_bytes());
}

std::string ImageRef::to_request_url() const {
    if (is_remote() || starts_with(uri, "data:")) return uri;
    std::string mt = media_type;
    if (mt.empty()) {
        auto ext = local_path() ? local_path()->extension().string() : std::string{};
        mt = (ext == ".png") ? "image/png" : (ext == ".gif") ? "image/gif" : (ext == ".webp") ? "image/webp" : "image/jpeg";
    }
    std::string b64 = is_inline() ? inline_base64 : base64_encode(read_bytes());
    return fmt::format("data:{};base64,{}", mt, b64);
}

std::string ImageRef::display() const {
    if (!is_inline()) return uri;
    return fmt::format("inline:{}", sha256_hex(inline_base64).substr(0, 12));
}

void to_json(json& j, const ImageRef& image) {
    if (image.is_inline()) {
        j = json{{"data", image.inline_base64}, {"media_type", image.media_type}};
    } else {
        j = json{{"uri", image.uri}};
    }
}

void from_json(const json& j, ImageRef& image) {
    image = ImageRef{};
    if (j.is_string()) {
        image.uri = j.get<std::string>();
    } else if (j.is_object() && j.contains("uri")) {
        image.uri = j.at("uri").get<std::string>();
    } else if (j.is_object() && j.contains("data")) {
        image.inline_base64 = j.at("data").get<std::string>();
        image.media_type = j.value("media_type", "image/jpeg");
    } else {
        throw ValidationError("image ref must be a URI string, {uri} or {data, media_type}");
    }
    if (image.uri.empty() && image.inline_base64.empty()) throw ValidationError("empty image ref");
}

void QueryRecord::validate() const {
    if (id.empty()) throw ValidationError("query without id");
    if (!has_content()) throw ValidationError(fmt::format("query {} has neither text nor images", id));
    for (const auto& img : images) {
        if (img.is_inline()) {
            if (img.inline_base64.empty()) throw ValidationError(fmt::format("query {}: empty inline image", id));
            continue;
        }
        if (auto p = img.local_path(); p && !fs::exists(*p)) {
            throw IngestionError(fmt::format("query {}: image {} not found", id, img.uri));
        }
    }
}

void to_json(json& j, const QueryRecord& q) {
    j = json{{"id", q.id}, {"source", q.source}, {"text", q.text}, {"images", q.images}, {"gold_answer", q.gold_answer}};
    if (q.gold_query) j["gold_query"] = *q.gold_query;
    if (q.human_label) j["human_label"] = *q.human_label;
}

void from_json(const json& j, QueryRecord& q) {
    q = QueryRecord{};
    if (!j.is_object()) throw ValidationError("query record must be a JSON object");
    if (!j.contains("id")) throw ValidationError("query record missing id");
    const auto& id = j.at("id");
    q.id = id.is_string() ? id.get<std::string>() : id.dump();
    q.source = j.value("source", "");
    q.text = j.contains("text") ? j.at("text").get<std::string>() : j.value("question", "");
    if (j.contains("images")) {
        q.images = j.at("images").get<std::vector<ImageRef>>();
    } else if (j.contains("image")) {
        q.images.push_back(j.at("image").get<ImageRef>());
    }
    q.gold_answer = j.contains("gold_answer") ? j.at("gold_answer").get<std::string>() : j.value("answer", "");
    if (j.contains("gold_query") && !j.at("gold_query").is_null()) q.gold_query = j.at("gold_query").get<std::string>();
    if (j.contains("human_label") && !j.at("human_label").is_null()) q.human_label = j.at("human_label").get<bool>();
}

std::vector<QueryRecord> load_queries(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError(fmt::format("cannot open query file {}", path.string()));
    const fs::path base = path.parent_path();
    std::vector<QueryRecord> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        QueryRecord q;
        try {
            q = json::parse(line).get<QueryRecord>();
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
        for (auto& img : q.images) {
            if (auto p = img.local_path(); p && p->is_relative()) img.uri = (base / *p).lexically_normal().string();
        }
        q.validate();
        if (!seen.insert(q.id).second) throw ValidationError(fmt::format("duplicate query id {}", q.id));
        out.push_back(std::move(q));
    }
    return out;
}

void write_queries(const fs::path& path, const std::vector<QueryRecord>& queries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestionError(fmt::format("cannot write {}", path.string()));
    for (const auto& q : queries) out << json(q).dump() << '\n';
}

}  // namespace kbgate
