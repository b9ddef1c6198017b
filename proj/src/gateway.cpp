// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/gateway.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>
#include <unistd.h>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"
#include "kbgate/retrieval.hpp"
#include "kbgate/score.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

DecodingParams DecodingParams::merged(const DecodingParams& o) const {
    DecodingParams out = *this;
    if (o.temperature) out.temperature = o.temperature;
    if (o.top_p) out.top_p = o.top_p;
    if (o.top_k) out.top_k = o.top_k;
    if (o.max_tokens) out.max_tokens = o.max_tokens;
    if (o.seed) out.seed = o.seed;
    return out;
}

DecodingParams DecodingParams::greedy() {
    DecodingParams p;
    p.temperature = 0.0;
    p.top_p = 1.0;
    p.top_k = 1;
    return p;
}

json DecodingParams::to_json() const {
    json j = json::object();
    if (temperature) j["temperature"] = *temperature;
    if (top_p) j["top_p"] = *top_p;
    if (top_k) j["top_k"] = *top_k;
    if (max_tokens) j["max_tokens"] = *max_tokens;
    if (seed) j["seed"] = *seed;
    return j;
}

DecodingParams DecodingParams::from_json(const json& j) {
    DecodingParams p;
    if (j.contains("temperature")) p.temperature = j.at("temperature").get<double>();
    if (j.contains("top_p")) p.top_p = j.at("top_p").get<double>();
    if (j.contains("top_k")) p.top_k = j.at("top_k").get<int>();
    if (j.contains("max_tokens")) p.max_tokens = j.at("max_tokens").get<int>();
    if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<std::int64_t>();
    return p;
}

void EndpointProfile::validate() const {
    if (name.empty()) throw ConfigError("endpoint profile without a name");
    if (model_name.empty()) throw ConfigError(fmt::format("profile {}: model name required", name));
    if (backend != "http" && backend != "mock") throw ConfigError(fmt::format("profile {}: unknown backend {}", name, backend));
    if (backend == "http" && base_url.empty()) throw ConfigError(fmt::format("profile {}: base_url required", name));
    rate_limit.validate();
}

json EndpointProfile::describe() const {
    return json{{"name", name},
                {"base_url", base_url},
                {"model", model_name},
                {"auth_env", auth_env},
                {"decoding", defaults.to_json()},
                {"rate_limit", {{"rps", rate_limit.requests_per_second}, {"max_in_flight", rate_limit.max_in_flight}}},
                {"retry",
                 {{"max_retries", retry.max_retries},
                  {"base_backoff_ms", retry.base_backoff_ms},
                  {"max_backoff_ms", retry.max_backoff_ms}}},
                {"dialect", dialect},
                {"backend", backend},
                {"mock", mock},
                {"cache", cache}};
}

EndpointProfile EndpointProfile::from_json(const json& j) {
    EndpointProfile p;
    p.name = j.at("name").get<std::string>();
    p.base_url = j.value("base_url", "");
    p.model_name = j.contains("model") ? j.at("model").get<std::string>() : j.value("model_name", p.name);
    p.auth_env = j.value("auth_env", "");
    if (j.contains("decoding")) p.defaults = DecodingParams::from_json(j.at("decoding"));
    if (j.contains("rate_limit")) {
        const auto& r = j.at("rate_limit");
        p.rate_limit.requests_per_second = r.value("rps", p.rate_limit.requests_per_second);
        p.rate_limit.max_in_flight = r.value("max_in_flight", p.rate_limit.max_in_flight);
    }
    if (j.contains("retry")) {
        const auto& r = j.at("retry");
        p.retry.max_retries = r.value("max_retries", p.retry.max_retries);
        p.retry.base_backoff_ms = r.value("base_backoff_ms", p.retry.base_backoff_ms);
        p.retry.max_backoff_ms = r.value("max_backoff_ms", p.retry.max_backoff_ms);
    }
    p.dialect = j.value("dialect", p.dialect);
    p.backend = j.value("backend", p.backend);
    if (j.contains("mock")) p.mock = j.at("mock");
    p.timeout_s = j.value("timeout_s", p.timeout_s);
    p.cache = j.value("cache", p.cache);
    p.validate();
    return p;
}

std::string cache_key(const GenerationRequest& request) {
    json message = json::array();
    for (const auto& seg : request.message.segments) {
        if (seg.kind == Segment::Kind::Text) {
            message.push_back(json{{"t", "text"}, {"text", seg.text}});
        } else {
            message.push_back(json{{"t", "image"}, {"sha256", seg.image.content_hash()}});
        }
    }
    json canonical{{"v", 1},
                   {"model", request.model_name},
                   {"message", std::move(message)},
                   {"params", request.params.to_json()},
                   {"sample_index", request.sample_index}};
    return sha256_hex(canonical.dump());
}

// ---------------------------------------------------------------------------
// Mock backend

namespace mock {

namespace {

constexpr std::string_view kVocabulary[] = {
    "red",    "blue",   "two",      "three",  "dog",     "cat",    "bridge", "tower",  "tree",   "river",  "london",
    "paris",  "tokyo",  "yes",      "no",     "car",     "train",  "church", "market", "bird",   "flower", "museum",
    "winter", "summer", "mountain", "street", "kitchen", "guitar", "statue", "garden", "castle", "harbor",
};

std::uint64_t bits(const std::string& key, int salt) { return digest_prefix(sha256_hex(fmt::format("{}:{}", key, salt))); }

std::optional<std::string> section_after(const std::string& text, std::string_view marker, std::string_view stop) {
    auto pos = text.find(marker);
    if (pos == std::string::npos) return std::nullopt;
    pos += marker.size();
    auto end = stop.empty() ? std::string::npos : text.find(stop, pos);
    return text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

}  // namespace

std::string answer_reply(const GenerationRequest& request, const std::string& key) {
    const std::string flat = request.message.flatten();
    if (auto ctx = section_after(flat, kContextHeader, ""); ctx) {
        // Echo the top-ranked snippet: "[1] title: text\n".
        if (auto first = section_after(*ctx, "[1] ", "\n"); first) {
            auto colon = first->find(": ");
            return std::string(text::trim(colon == std::string::npos ? *first : first->substr(colon + 2)));
        }
    }
    std::uint64_t h = bits(key, 1);
    std::size_t n_words = 1 + h % 3;
    std::string out;
    for (std::size_t i = 0; i < n_words; ++i) {
        if (i) out += ' ';
        out += kVocabulary[(h >> (8 * (i + 1))) % std::size(kVocabulary)];
    }
    return out;
}

std::string judge_reply(const GenerationRequest& request, const std::string& key) {
    const std::string flat = request.message.flatten();
    auto gold = section_after(flat, "Reference Answer:\n", "\n\nGenerated Answer:");
    auto pred = section_after(flat, "Generated Answer:\n", "");
    std::uint64_t h = bits(key, 2);
    double score = 0.0;
    if (gold && pred) {
        auto g = text::tokens(*gold);
        auto p = text::tokens(*pred);
        std::size_t hit = 0;
        for (const auto& t : g) {
            if (std::find(p.begin(), p.end(), t) != p.end()) ++hit;
        }
        double overlap = g.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(g.size());
        score = 1.0 + 4.0 * overlap + 0.5 * (static_cast<double>(h % 3) - 1.0);
    } else {
        score = 1.0 + static_cast<double>(h % 41) / 10.0;
    }
    score = std::clamp(score, 1.0, 5.0);
    return fmt::format("{:.1f}", score);
}

std::string hard_boundary_reply(const std::string& key) { return (bits(key, 3) % 2) ? "true" : "false"; }

std::string soft_boundary_reply(const std::string& key) {
    return fmt::format("{:.1f}", 1.0 + static_cast<double>(bits(key, 4) % 41) / 10.0);
}

}  // namespace mock

MockBackend::MockBackend(const json& options) {
    const std::string kind = options.value("kind", "answer");
    std::map<std::string, std::string> replies;
    if (options.contains("replies")) replies = options.at("replies").get<std::map<std::string, std::string>>();
    const double offset = options.value("offset", 0.0);

    std::function<std::string(const GenerationRequest&, const std::string&)> base;
    if (kind == "answer") {
        base = mock::answer_reply;
    } else if (kind == "judge") {
        base = [offset](const GenerationRequest& r, const std::string& k) {
            std::string reply = mock::judge_reply(r, k);
            if (offset == 0.0) return reply;
            return fmt::format("{:.4f}", std::clamp(*parse_first_number(reply) + offset, 1.0, 5.0));
        };
    } else if (kind == "hkb") {
        base = [](const GenerationRequest&, const std::string& k) { return mock::hard_boundary_reply(k); };
    } else if (kind == "skb") {
        base = [](const GenerationRequest&, const std::string& k) { return mock::soft_boundary_reply(k); };
    } else if (kind == "echo") {
        base = [](const GenerationRequest& r, const std::string&) { return r.message.flatten(); };
    } else {
        throw ConfigError(fmt::format("unknown mock kind '{}'", kind));
    }

    responder_ = [base, replies](const GenerationRequest& r, const std::string& k) {
        if (!replies.empty()) {
            const std::string flat = r.message.flatten();
            for (const auto& [needle, reply] : replies) {
                if (flat.find(needle) != std::string::npos) return reply;
            }
        }
        return base(r, k);
    };
    if (options.contains("latency_ms")) {
        double fixed = options.at("latency_ms").get<double>();
        latency_ = [fixed](const GenerationRequest&, const std::string&) { return fixed; };
    }
    hold_ms_ = options.value("hold_ms", 0.0);
}

MockBackend::MockBackend(Responder responder, LatencyFn latency)
    : responder_(std::move(responder)), latency_(std::move(latency)) {}

GenerationResponse MockBackend::complete(const EndpointProfile&, const GenerationRequest& request,
                                         const std::string& key) {
    int now = ++in_flight_;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    ++calls_;
    if (hold_ms_ > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(hold_ms_));
    GenerationResponse resp;
    try {
        resp.text = responder_(request, key);
    } catch (...) {
        --in_flight_;
        throw;
    }
    resp.latency_ms = latency_ ? latency_(request, key)
                               : 20.0 + static_cast<double>(digest_prefix(sha256_hex(key + ":latency")) % 80);
    resp.metadata = json{{"backend", "mock"}};
    --in_flight_;
    return resp;
}

// ---------------------------------------------------------------------------
// Response cache

namespace {

json response_to_json(const std::string& key, const GenerationResponse& r) {
    return json{{"key", key},
                {"text", r.text},
                {"finish_reason", r.finish_reason},
                {"latency_ms", r.latency_ms},
                {"metadata", r.metadata}};
}

std::string unique_suffix() {
    static std::atomic<unsigned long> counter{0};
    std::ostringstream os;
    os << ::getpid() << '.' << std::this_thread::get_id() << '.' << counter++;
    return os.str();
}

std::optional<json> read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        return json::parse(in);
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

}  // namespace

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path ResponseCache::path_for(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

std::optional<GenerationResponse> ResponseCache::get(const std::string& key) const {
    auto j = read_json_file(path_for(key));
    if (!j || j->value("key", "") != key) return std::nullopt;
    GenerationResponse r;
    r.text = j->value("text", "");
    r.finish_reason = j->value("finish_reason", "stop");
    r.latency_ms = j->value("latency_ms", 0.0);
    r.metadata = j->value("metadata", json::object());
    r.from_cache = true;
    return r;
}

void ResponseCache::put(const std::string& key, const GenerationResponse& response) {
    const fs::path final_path = path_for(key);
    fs::create_directories(final_path.parent_path());
    const fs::path tmp = final_path.parent_path() / (key + ".tmp." + unique_suffix());
    {
        std::ofstream out(tmp, std::ios::binary);
        out << response_to_json(key, response).dump();
        if (!out) throw IngestionError(fmt::format("cannot write cache entry {}", tmp.string()));
    }
    std::error_code ec;
    fs::create_hard_link(tmp, final_path, ec);
    fs::remove(tmp);
    if (!ec) return;
    if (ec != std::errc::file_exists) throw IngestionError(fmt::format("cache write failed: {}", ec.message()));
    auto existing = get(key);
    if (!existing) throw IntegrityError(fmt::format("cache entry {} exists but is unreadable", key));
    if (existing->text != response.text || existing->finish_reason != response.finish_reason) {
        throw IntegrityError(fmt::format("conflicting cache content for key {}", key));
    }
}

CallLog::CallLog(fs::path path) : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw IngestionError(fmt::format("cannot open call log {}", path.string()));
}

void CallLog::record(const json& entry) {
    std::lock_guard lock(mutex_);
    out_ << entry.dump() << '\n';
    out_.flush();
}

// ---------------------------------------------------------------------------
// Gateway

ModelGateway::ModelGateway(std::vector<EndpointProfile> profiles) {
    auto http = std::make_shared<HttpBackend>();
    for (auto& p : profiles) {
        p.validate();
        Slot s;
        s.backend = p.backend == "mock" ? std::shared_ptr<Backend>(std::make_shared<MockBackend>(p.mock)) : http;
        s.limiter = std::make_unique<RateLimiter>(p.rate_limit);
        s.profile = std::move(p);
        auto name = s.profile.name;
        if (!slots_.emplace(name, std::move(s)).second) throw ConfigError(fmt::format("duplicate profile {}", name));
    }
}

void ModelGateway::enable_cache(fs::path dir) { cache_ = std::make_unique<ResponseCache>(std::move(dir)); }

void ModelGateway::set_backend(const std::string& profile, std::shared_ptr<Backend> backend) {
    slot(profile).backend = std::move(backend);
}

void ModelGateway::force_mock(const std::function<json(const EndpointProfile&)>& options_for) {
    for (auto& [name, s] : slots_) {
        json options = options_for ? options_for(s.profile) : s.profile.mock;
        // Mocks keep the in-flight bound but drop start spacing unless asked.
        RateLimit limit = s.profile.rate_limit;
        limit.requests_per_second = options.value("rps", 1e9);
        s.limiter = std::make_unique<RateLimiter>(limit);
        s.backend = std::make_shared<MockBackend>(options);
    }
}

bool ModelGateway::has_profile(std::string_view name) const { return slots_.find(name) != slots_.end(); }

ModelGateway::Slot& ModelGateway::slot(std::string_view name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ConfigError(fmt::format("unknown endpoint profile '{}'", name));
    return it->second;
}

const ModelGateway::Slot& ModelGateway::slot(std::string_view name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ConfigError(fmt::format("unknown endpoint profile '{}'", name));
    return it->second;
}

const EndpointProfile& ModelGateway::profile(std::string_view name) const { return slot(name).profile; }

const RateLimiter& ModelGateway::limiter(std::string_view name) const { return *slot(name).limiter; }

GenerationResponse ModelGateway::generate(const std::string& profile_name, const RenderedMessage& message,
                                          const DecodingParams& overrides, int sample_index) {
    ++requests_;
    Slot& s = slot(profile_name);
    if (message.empty()) throw ValidationError("empty message");
    GenerationRequest request{s.profile.model_name, message, s.profile.defaults.merged(overrides), sample_index};
    const std::string key = cache_key(request);

    auto log = [&](const GenerationResponse* resp, int attempts, const std::string& error) {
        if (!call_log_) return;
        json entry{{"profile", s.profile.name}, {"key", key}, {"sample_index", sample_index}, {"attempts", attempts}};
        if (resp) {
            entry["cached"] = resp->from_cache;
            entry["latency_ms"] = resp->latency_ms;
            entry["finish_reason"] = resp->finish_reason;
        }
        if (!error.empty()) entry["error"] = error;
        call_log_->record(entry);
    };

    if (cache_ && s.profile.cache) {
        if (auto hit = cache_->get(key)) {
            ++cache_hits_;
            log(&*hit, 0, "");
            return *hit;
        }
    }

    const RetryPolicy& retry = s.profile.retry;
    for (int attempt = 1;; ++attempt) {
        try {
            GenerationResponse resp;
            {
                auto permit = s.limiter->acquire();
                ++network_calls_;
                resp = s.backend->complete(s.profile, request, key);
            }
            resp.from_cache = false;
            if (cache_ && s.profile.cache && resp.ok()) cache_->put(key, resp);
            log(&resp, attempt, "");
            return resp;
        } catch (const RateLimitedError& e) {
            if (attempt > retry.max_retries) {
                ++failures_;
                log(nullptr, attempt, e.what());
                throw QuotaError(fmt::format("{}: rate limited after {} attempts: {}", s.profile.name, attempt, e.what()));
            }
        } catch (const TransportError& e) {
            if (attempt > retry.max_retries) {
                ++failures_;
                log(nullptr, attempt, e.what());
                throw TransportError(fmt::format("{}: transport failure after {} attempts: {}", s.profile.name, attempt,
                                                 e.what()));
            }
        } catch (const Error& e) {
            ++failures_;
            log(nullptr, attempt, e.what());
            throw;
        }
        ++retries_;
        std::this_thread::sleep_for(retry.backoff(attempt));
    }
}

GatewayStats ModelGateway::stats() const {
    return GatewayStats{requests_.load(), cache_hits_.load(), network_calls_.load(), retries_.load(), failures_.load()};
}

}  // namespace kbgate
