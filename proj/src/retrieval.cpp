// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/retrieval.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"
#include "kbgate/http_util.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const Snippet& s) { j = json{{"title", s.title}, {"text", s.text}, {"url", s.url}}; }

void from_json(const json& j, Snippet& s) {
    s.title = j.value("title", "");
    if (j.contains("text")) s.text = j.at("text").get<std::string>();
    else s.text = j.value("snippet", "");
    s.url = j.value("url", "");
}

void to_json(json& j, const RetrievedContext& c) {
    json issued{{"kind", c.issued.kind == IssuedQuery::Kind::Text ? "text" : "image"}};
    if (c.issued.kind == IssuedQuery::Kind::Text) issued["text"] = c.issued.text;
    else issued["image"] = c.issued.image;
    j = json{{"query_id", c.query_id}, {"provider", c.provider},       {"issued", issued},
             {"snippets", c.snippets}, {"images", c.images},           {"duration_ms", c.duration_ms}};
}

void from_json(const json& j, RetrievedContext& c) {
    c = RetrievedContext{};
    c.query_id = j.value("query_id", "");
    c.provider = j.value("provider", "");
    const auto& issued = j.at("issued");
    if (issued.value("kind", "text") == "image") {
        c.issued.kind = IssuedQuery::Kind::Image;
        c.issued.image = issued.at("image").get<ImageRef>();
    } else {
        c.issued.text = issued.value("text", "");
    }
    c.snippets = j.value("snippets", std::vector<Snippet>{});
    if (j.contains("images")) c.images = j.at("images").get<std::vector<ImageRef>>();
    c.duration_ms = j.value("duration_ms", 0.0);
}

namespace {

void require_text(std::string_view query) {
    if (text::trim(query).empty()) throw ValidationError("empty search query");
}

std::vector<Snippet> first_k(std::vector<Snippet> v, std::size_t k) {
    if (v.size() > k) v.resize(k);
    return v;
}

}  // namespace

// ---- fixture ----

FixtureProvider::FixtureProvider(fs::path dir, std::size_t top_k) : top_k_(top_k) {
    if (!fs::is_directory(dir)) throw ConfigError(fmt::format("fixture directory {} not found", dir.string()));
    auto load = [&](const fs::path& file, const char* key, auto& into) {
        std::ifstream in(file);
        if (!in) return;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim(line).empty()) continue;
            try {
                auto j = json::parse(line);
                Entry e;
                e.results = j.value("results", std::vector<Snippet>{});
                e.latency_ms = j.value("latency_ms", 0.0);
                into[j.at(key).get<std::string>()] = std::move(e);
            } catch (const json::exception& ex) {
                throw ParseError(fmt::format("{}:{}: {}", file.string(), lineno, ex.what()));
            }
        }
    };
    load(dir / "text.jsonl", "query", text_);
    load(dir / "image.jsonl", "image", image_);
}

RetrievedContext FixtureProvider::search_text(std::string_view query) {
    require_text(query);
    RetrievedContext ctx;
    ctx.provider = name();
    ctx.issued.text = std::string(query);
    auto it = text_.find(query);
    if (it == text_.end()) it = text_.find(text::normalize(query));
    if (it != text_.end()) {
        ctx.snippets = first_k(it->second.results, top_k_);
        ctx.duration_ms = it->second.latency_ms;
    }
    return ctx;
}

RetrievedContext FixtureProvider::search_image(const ImageRef& image) {
    RetrievedContext ctx;
    ctx.provider = name();
    ctx.issued.kind = IssuedQuery::Kind::Image;
    ctx.issued.image = image;
    auto it = image.uri.empty() ? image_.end() : image_.find(image.uri);
    if (it == image_.end()) it = image_.find(image.content_hash());  // throws IngestionError when unreadable
    if (it != image_.end()) {
        ctx.snippets = first_k(it->second.results, top_k_);
        ctx.duration_ms = it->second.latency_ms;
    }
    return ctx;
}

// ---- mock ----

MockSearchProvider::MockSearchProvider(std::size_t top_k, double latency_ms) : top_k_(top_k), latency_ms_(latency_ms) {}

namespace {

constexpr std::string_view kMockWords[] = {
    "harbor", "crimson", "orbit", "meadow", "lantern", "granite", "willow", "summit", "falcon", "ember",
    "cobalt", "prairie", "beacon", "glacier", "saffron", "tundra", "quarry", "maple", "zephyr", "atlas",
};

}  // namespace

RetrievedContext MockSearchProvider::synthesize(const std::string& seed, IssuedQuery issued) const {
    const std::string h = sha256_hex(seed);
    std::seed_seq seq(h.begin(), h.end());
    std::mt19937_64 rng(seq);
    RetrievedContext ctx;
    ctx.provider = name();
    ctx.issued = std::move(issued);
    for (std::size_t i = 0; i < top_k_; ++i) {
        Snippet s;
        s.title = fmt::format("{} {}", kMockWords[rng() % std::size(kMockWords)], i + 1);
        s.text = fmt::format("{} {} {}", kMockWords[rng() % std::size(kMockWords)],
                             kMockWords[rng() % std::size(kMockWords)], kMockWords[rng() % std::size(kMockWords)]);
        s.url = fmt::format("https://search.invalid/{}/{}", h.substr(0, 12), i + 1);
        ctx.snippets.push_back(std::move(s));
    }
    ctx.duration_ms = latency_ms_ >= 0.0 ? latency_ms_ : 50.0 + static_cast<double>(digest_prefix(h) % 150);
    return ctx;
}

RetrievedContext MockSearchProvider::search_text(std::string_view query) {
    require_text(query);
    IssuedQuery q;
    q.text = std::string(query);
    std::string seed = "text:" + q.text;
    return synthesize(seed, std::move(q));
}

RetrievedContext MockSearchProvider::search_image(const ImageRef& image) {
    IssuedQuery q;
    q.kind = IssuedQuery::Kind::Image;
    q.image = image;
    return synthesize("image:" + image.content_hash(), std::move(q));
}

// ---- http ----

HttpSearchProvider::HttpSearchProvider(HttpSearchConfig config)
    : config_(std::move(config)), limiter_(config_.rate_limit) {
    if (config_.endpoint.empty()) throw ConfigError(fmt::format("search provider {} has no endpoint", config_.name));
}

RetrievedContext HttpSearchProvider::post(const json& body, IssuedQuery issued) {
    auto url = http::parse_url(config_.endpoint);
    auto headers = config_.key_env.empty() ? std::vector<std::pair<std::string, std::string>>{}
                                           : http::auth_headers(config_.key_env, config_.name);
    json payload = body;
    payload["top_k"] = config_.top_k;
    for (int attempt = 0;; ++attempt) {
        try {
            http::Reply reply;
            {
                auto permit = limiter_.acquire();
                reply = http::post_json(url.origin, url.path.empty() ? "/" : url.path, payload, headers,
                                        config_.timeout_s);
            }
            http::raise_for_status(reply, config_.name);
            json j;
            try {
                j = json::parse(reply.body);
            } catch (const json::exception& e) {
                throw MalformedReplyError(fmt::format("{}: unparsable reply: {}", config_.name, e.what()));
            }
            if (!j.contains("results") || !j.at("results").is_array()) {
                throw MalformedReplyError(fmt::format("{}: reply has no results array", config_.name));
            }
            RetrievedContext ctx;
            ctx.provider = name();
            ctx.issued = std::move(issued);
            ctx.snippets = first_k(j.at("results").get<std::vector<Snippet>>(), config_.top_k);
            ctx.duration_ms = reply.elapsed_ms;
            return ctx;
        } catch (const RateLimitedError& e) {
            if (attempt >= config_.retry.max_retries) {
                throw QuotaError(fmt::format("{}: rate limited after {} attempts: {}", config_.name, attempt + 1,
                                             e.what()));
            }
        } catch (const TransportError& e) {
            if (attempt >= config_.retry.max_retries) {
                throw TransportError(fmt::format("{}: failed after {} attempts: {}", config_.name, attempt + 1,
                                                 e.what()));
            }
        }
        std::this_thread::sleep_for(config_.retry.backoff(attempt + 1));
    }
}

RetrievedContext HttpSearchProvider::search_text(std::string_view query) {
    require_text(query);
    IssuedQuery q;
    q.text = std::string(query);
    const json body{{"query", q.text}};
    return post(body, std::move(q));
}

RetrievedContext HttpSearchProvider::search_image(const ImageRef& image) {
    IssuedQuery q;
    q.kind = IssuedQuery::Kind::Image;
    q.image = image;
    std::string url = image.to_request_url();  // throws IngestionError when unreadable
    return post(json{{"image_url", url}}, std::move(q));
}

std::unique_ptr<SearchProvider> make_search_provider(const json& config, std::size_t default_top_k,
                                                     const fs::path& base_dir) {
    const std::string type = config.value("type", "mock");
    const std::size_t top_k = config.value("top_k", default_top_k);
    if (top_k == 0) throw ConfigError("search top_k must be positive");
    if (type == "mock") return std::make_unique<MockSearchProvider>(top_k, config.value("latency_ms", -1.0));
    if (type == "fixture") {
        fs::path dir = config.at("dir").get<std::string>();
        if (dir.is_relative() && !base_dir.empty()) dir = base_dir / dir;
        return std::make_unique<FixtureProvider>(dir, top_k);
    }
    if (type == "http") {
        HttpSearchConfig c;
        c.name = config.value("name", "http");
        c.endpoint = config.at("endpoint").get<std::string>();
        c.key_env = config.value("key_env", "");
        c.top_k = top_k;
        c.timeout_s = config.value("timeout_s", 30.0);
        if (config.contains("rate_limit")) {
            const auto& r = config.at("rate_limit");
            c.rate_limit.requests_per_second = r.value("rps", c.rate_limit.requests_per_second);
            c.rate_limit.max_in_flight = r.value("max_in_flight", c.rate_limit.max_in_flight);
        }
        if (config.contains("retry")) {
            const auto& r = config.at("retry");
            c.retry.max_retries = r.value("max_retries", c.retry.max_retries);
            c.retry.base_backoff_ms = r.value("base_backoff_ms", c.retry.base_backoff_ms);
            c.retry.max_backoff_ms = r.value("max_backoff_ms", c.retry.max_backoff_ms);
        }
        return std::make_unique<HttpSearchProvider>(std::move(c));
    }
    throw ConfigError(fmt::format("unknown search provider type '{}'", type));
}

std::string_view to_string(RetrievalPolicy p) {
    switch (p) {
        case RetrievalPolicy::Auto: return "auto";
        case RetrievalPolicy::GoldElseText: return "gold-else-text";
        case RetrievalPolicy::Text: return "text";
        case RetrievalPolicy::Image: return "image";
    }
    return "?";
}

RetrievalPolicy parse_retrieval_policy(std::string_view s) {
    for (auto p : {RetrievalPolicy::Auto, RetrievalPolicy::GoldElseText, RetrievalPolicy::Text, RetrievalPolicy::Image}) {
        if (to_string(p) == s) return p;
    }
    throw ConfigError(fmt::format("unknown retrieval policy '{}' (auto|gold-else-text|text|image)", s));
}

IssuedQuery pick_retrieval_query(const QueryRecord& query, RetrievalPolicy policy) {
    const bool has_gold = query.gold_query && !text::trim(*query.gold_query).empty();
    IssuedQuery q;
    switch (policy) {
        case RetrievalPolicy::Auto:
            if (has_gold) {
                q.text = *query.gold_query;
            } else if (!query.images.empty()) {
                q.kind = IssuedQuery::Kind::Image;
                q.image = query.images.front();
            } else {
                q.text = query.text;
            }
            break;
        case RetrievalPolicy::GoldElseText: q.text = has_gold ? *query.gold_query : query.text; break;
        case RetrievalPolicy::Text: q.text = query.text; break;
        case RetrievalPolicy::Image:
            if (query.images.empty()) {
                throw ValidationError(fmt::format("query {} has no image for image search", query.id));
            }
            q.kind = IssuedQuery::Kind::Image;
            q.image = query.images.front();
            break;
    }
    if (q.kind == IssuedQuery::Kind::Text && text::trim(q.text).empty()) {
        throw ValidationError(fmt::format("query {} has no text to search", query.id));
    }
    return q;
}

namespace {

std::string one_line(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out += (c == '\n' || c == '\r') ? ' ' : c;
    return out;
}

}  // namespace

std::string assemble_context(const RetrievedContext& ctx, std::size_t budget) {
    if (budget == 0) throw ValidationError("context budget must be positive");
    std::string out(kContextHeader);
    std::size_t used = text::utf8_length(out);
    std::size_t kept = 0;
    for (const auto& s : ctx.snippets) {
        std::string line = fmt::format("[{}] {}: {}\n", kept + 1, one_line(s.title), one_line(s.text));
        std::size_t len = text::utf8_length(line);
        if (used + len > budget) break;
        out += line;
        used += len;
        ++kept;
    }
    if (kept == 0) {
        return text::utf8_length(kNoResultsMarker) <= budget ? std::string(kNoResultsMarker) : std::string();
    }
    return out;
}

// ---- cache ----

SearchCache::SearchCache(fs::path dir, std::optional<double> max_age_s) : dir_(std::move(dir)), max_age_s_(max_age_s) {
    fs::create_directories(dir_);
}

std::string SearchCache::key_for(const std::string& provider, const IssuedQuery& issued) {
    std::string what = issued.kind == IssuedQuery::Kind::Text ? "text:" + issued.text
                                                              : "image:" + issued.image.content_hash();
    return sha256_hex(json{{"provider", provider}, {"query", what}}.dump());
}

namespace {

double now_s() {
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

std::optional<RetrievedContext> SearchCache::get(const std::string& key) const {
    std::ifstream in(dir_ / (key + ".json"));
    if (!in) return std::nullopt;
    try {
        json j = json::parse(in);
        if (max_age_s_ && now_s() - j.at("stored_at").get<double>() > *max_age_s_) return std::nullopt;
        return j.at("context").get<RetrievedContext>();
    } catch (const json::exception&) {
        return std::nullopt;  // unreadable entries are treated as misses
    }
}

void SearchCache::put(const std::string& key, const RetrievedContext& ctx) {
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = dir_ / fmt::format(".{}.{}.tmp", key, counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << json{{"stored_at", now_s()}, {"context", ctx}}.dump();
    }
    fs::rename(tmp, dir_ / (key + ".json"));
}

// ---- retriever ----

Retriever::Retriever(std::shared_ptr<SearchProvider> text, std::shared_ptr<SearchProvider> image,
                     RetrievalPolicy policy)
    : text_(std::move(text)), image_(std::move(image)), policy_(policy) {
    if (!text_ || !image_) throw ConfigError("retriever needs both a text and an image provider");
}

void Retriever::enable_cache(fs::path dir, std::optional<double> max_age_s) {
    cache_ = std::make_unique<SearchCache>(std::move(dir), max_age_s);
}

RetrievedContext Retriever::retrieve(const QueryRecord& query) {
    IssuedQuery issued = pick_retrieval_query(query, policy_);
    SearchProvider& provider = issued.kind == IssuedQuery::Kind::Text ? *text_ : *image_;
    std::string key;
    if (cache_) {
        key = SearchCache::key_for(provider.name(), issued);
        if (auto hit = cache_->get(key)) {
            hit->query_id = query.id;
            return *hit;
        }
    }
    RetrievedContext ctx = issued.kind == IssuedQuery::Kind::Text ? provider.search_text(issued.text)
                                                                  : provider.search_image(issued.image);
    ctx.query_id = query.id;
    if (cache_) cache_->put(key, ctx);
    return ctx;
}

}  // namespace kbgate
