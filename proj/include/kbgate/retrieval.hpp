// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Text and image search providers and assembly of retrieved context.

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kbgate/query.hpp"
#include "kbgate/rate_limit.hpp"

namespace kbgate {

struct Snippet {
    std::string title;
    std::string text;
    std::string url;

    friend bool operator==(const Snippet&, const Snippet&) = default;
};

struct IssuedQuery {
    enum class Kind { Text, Image };
    Kind kind = Kind::Text;
    std::string text;
    ImageRef image;
};

struct RetrievedContext {
    std::string query_id;
    std::string provider;
    IssuedQuery issued;
    std::vector<Snippet> snippets;
    std::vector<ImageRef> images;
    double duration_ms = 0.0;
};

void to_json(nlohmann::json& j, const Snippet& s);
void from_json(const nlohmann::json& j, Snippet& s);
void to_json(nlohmann::json& j, const RetrievedContext& c);
void from_json(const nlohmann::json& j, RetrievedContext& c);

class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    virtual std::string name() const = 0;
    /// Empty query throws ValidationError.
    virtual RetrievedContext search_text(std::string_view query) = 0;
    /// Unreadable image throws IngestionError. Zero hits is not an error.
    virtual RetrievedContext search_image(const ImageRef& image) = 0;
};

/// Canned results from a directory:
///   text.jsonl   {"query": "...", "results": [{"title","text","url"}], "latency_ms"?}
///   image.jsonl  {"image": "<uri or sha256 of bytes>", "results": [...], "latency_ms"?}
class FixtureProvider : public SearchProvider {
public:
    FixtureProvider(std::filesystem::path dir, std::size_t top_k = 5);
    std::string name() const override { return "fixture"; }
    RetrievedContext search_text(std::string_view query) override;
    RetrievedContext search_image(const ImageRef& image) override;

private:
    struct Entry {
        std::vector<Snippet> results;
        double latency_ms = 0.0;
    };
    std::map<std::string, Entry, std::less<>> text_;
    std::map<std::string, Entry, std::less<>> image_;
    std::size_t top_k_;
};

/// Deterministic synthetic results derived from a hash of the issued query.
class MockSearchProvider : public SearchProvider {
public:
    explicit MockSearchProvider(std::size_t top_k = 5, double latency_ms = -1.0);
    std::string name() const override { return "mock"; }
    RetrievedContext search_text(std::string_view query) override;
    RetrievedContext search_image(const ImageRef& image) override;

private:
    RetrievedContext synthesize(const std::string& seed, IssuedQuery issued) const;
    std::size_t top_k_;
    double latency_ms_;
};

struct HttpSearchConfig {
    std::string name = "http";
    /// POST target; receives {"query": ...} or {"image_url": ...}.
    std::string endpoint;
    std::string key_env;
    std::size_t top_k = 5;
    RateLimit rate_limit;
    RetryPolicy retry;
    double timeout_s = 30.0;
};

/// Generic JSON search API: reply {"results": [{"title", "snippet"|"text", "url"}]}.
class HttpSearchProvider : public SearchProvider {
public:
    explicit HttpSearchProvider(HttpSearchConfig config);
    std::string name() const override { return config_.name; }
    RetrievedContext search_text(std::string_view query) override;
    RetrievedContext search_image(const ImageRef& image) override;

private:
    RetrievedContext post(const nlohmann::json& body, IssuedQuery issued);
    HttpSearchConfig config_;
    RateLimiter limiter_;
};

/// Builds a provider from config {"type": "fixture"|"mock"|"http", ...}.
std::unique_ptr<SearchProvider> make_search_provider(const nlohmann::json& config, std::size_t default_top_k,
                                                     const std::filesystem::path& base_dir = {});

enum class RetrievalPolicy { Auto, GoldElseText, Text, Image };
std::string_view to_string(RetrievalPolicy p);
RetrievalPolicy parse_retrieval_policy(std::string_view s);

/// auto: gold query (text search) if present, else image search on the first
/// image, else text search on the question. gold-else-text: gold query or
/// question. text: question. image: first image, ValidationError without one.
IssuedQuery pick_retrieval_query(const QueryRecord& query, RetrievalPolicy policy);

inline constexpr std::string_view kContextHeader = "Search results:\n";
inline constexpr std::string_view kNoResultsMarker = "Search results:\n(no results)\n";

/// Snippets in rank order under a fixed connective template, truncated at
/// snippet granularity so the output never exceeds `budget` code points.
std::string assemble_context(const RetrievedContext& ctx, std::size_t budget);

/// Search results cached by (provider, issued query hash).
class SearchCache {
public:
    SearchCache(std::filesystem::path dir, std::optional<double> max_age_s = {});
    std::optional<RetrievedContext> get(const std::string& key) const;
    void put(const std::string& key, const RetrievedContext& ctx);
    static std::string key_for(const std::string& provider, const IssuedQuery& issued);

private:
    std::filesystem::path dir_;
    std::optional<double> max_age_s_;
};

class Retriever {
public:
    Retriever(std::shared_ptr<SearchProvider> text, std::shared_ptr<SearchProvider> image,
              RetrievalPolicy policy = RetrievalPolicy::Auto);

    void enable_cache(std::filesystem::path dir, std::optional<double> max_age_s = {});

    RetrievedContext retrieve(const QueryRecord& query);
    RetrievalPolicy policy() const { return policy_; }

private:
    std::shared_ptr<SearchProvider> text_;
    std::shared_ptr<SearchProvider> image_;
    RetrievalPolicy policy_;
    std::unique_ptr<SearchCache> cache_;
};

}  // namespace kbgate
