// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Uniform client for generation endpoints: the sampled VLLM, the judge, the
// boundary models and the answering VLLM all go through ModelGateway.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "kbgate/prompt.hpp"
#include "kbgate/rate_limit.hpp"

namespace kbgate {

struct DecodingParams {
    std::optional<double> temperature;
    std::optional<double> top_p;
    std::optional<int> top_k;
    std::optional<int> max_tokens;
    std::optional<std::int64_t> seed;

    /// Fields set in `overrides` win.
    DecodingParams merged(const DecodingParams& overrides) const;
    static DecodingParams greedy();
    /// Only the fields that are set, keys sorted.
    nlohmann::json to_json() const;
    static DecodingParams from_json(const nlohmann::json& j);
};

struct EndpointProfile {
    std::string name;
    std::string base_url;
    std::string model_name;
    /// Name of the environment variable holding the API key. Never the key.
    std::string auth_env;
    DecodingParams defaults;
    RateLimit rate_limit;
    RetryPolicy retry;
    std::string dialect = "plain";
    /// "http" or "mock".
    std::string backend = "http";
    /// Options for the mock backend ({"kind": "answer"|"judge"|"hkb"|"skb"|"echo", ...}).
    nlohmann::json mock = nlohmann::json::object();
    double timeout_s = 60.0;
    bool cache = true;

    void validate() const;
    /// Secret-free description for manifests and config hashing.
    nlohmann::json describe() const;
    static EndpointProfile from_json(const nlohmann::json& j);
};

struct GenerationRequest {
    std::string model_name;
    RenderedMessage message;
    DecodingParams params;
    /// Keys independent draws of one prompt (sample index, judge attempt).
    int sample_index = 0;
};

struct GenerationResponse {
    std::string text;
    std::string finish_reason = "stop";
    double latency_ms = 0.0;
    nlohmann::json metadata = nlohmann::json::object();
    bool from_cache = false;

    bool ok() const { return finish_reason == "stop" || finish_reason == "length"; }
};

/// SHA-256 over model name, canonical message bytes (images by content
/// hash), decoding params and sample index. Throws IngestionError when an
/// image cannot be read.
std::string cache_key(const GenerationRequest& request);

class Backend {
public:
    virtual ~Backend() = default;
    /// Performs one attempt. Throws TransportError / RateLimitedError for
    /// retryable failures, AuthError / MalformedReplyError otherwise.
    virtual GenerationResponse complete(const EndpointProfile& profile, const GenerationRequest& request,
                                        const std::string& key) = 0;
};

/// Deterministic offline backend. Replies and reported latencies are pure
/// functions of the request (and hence of its cache key).
class MockBackend : public Backend {
public:
    using Responder = std::function<std::string(const GenerationRequest&, const std::string& key)>;
    using LatencyFn = std::function<double(const GenerationRequest&, const std::string& key)>;

    /// Behaviour from profile mock options.
    explicit MockBackend(const nlohmann::json& options = nlohmann::json::object());
    MockBackend(Responder responder, LatencyFn latency = {});

    GenerationResponse complete(const EndpointProfile& profile, const GenerationRequest& request,
                                const std::string& key) override;

    std::size_t calls() const { return calls_.load(); }
    int peak_in_flight() const { return peak_.load(); }

private:
    Responder responder_;
    LatencyFn latency_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> peak_{0};
    double hold_ms_ = 0.0;
};

/// Built-in mock reply generators, exposed for tests.
namespace mock {
std::string answer_reply(const GenerationRequest& request, const std::string& key);
std::string judge_reply(const GenerationRequest& request, const std::string& key);
std::string hard_boundary_reply(const std::string& key);
std::string soft_boundary_reply(const std::string& key);
}  // namespace mock

/// Chat-completions client over HTTP(S).
class HttpBackend : public Backend {
public:
    GenerationResponse complete(const EndpointProfile& profile, const GenerationRequest& request,
                                const std::string& key) override;

    /// Request body for a chat endpoint (exposed for tests).
    static nlohmann::json request_body(const EndpointProfile& profile, const GenerationRequest& request);
    /// Extracts text and finish reason. Throws MalformedReplyError.
    static GenerationResponse parse_reply(const std::string& body);
};

/// Directory of digest-named JSON records: <dir>/<aa>/<digest>.json.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<GenerationResponse> get(const std::string& key) const;
    /// Idempotent for identical content; IntegrityError if the key already
    /// holds different text.
    void put(const std::string& key, const GenerationResponse& response);

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path path_for(const std::string& key) const;
    std::filesystem::path dir_;
};

/// Thread-safe JSONL sink recording every generate() call.
class CallLog {
public:
    explicit CallLog(std::filesystem::path path);
    void record(const nlohmann::json& entry);

private:
    std::mutex mutex_;
    std::ofstream out_;
};

struct GatewayStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t network_calls = 0;
    std::size_t retries = 0;
    std::size_t failures = 0;
};

class ModelGateway {
public:
    explicit ModelGateway(std::vector<EndpointProfile> profiles);

    void enable_cache(std::filesystem::path dir);
    void set_call_log(std::shared_ptr<CallLog> log) { call_log_ = std::move(log); }
    /// Replaces the backend of one profile (tests, instrumented mocks).
    void set_backend(const std::string& profile, std::shared_ptr<Backend> backend);
    /// Routes every profile to a mock backend built from its mock options.
    /// Start spacing is lifted unless the options carry "rps"; the in-flight
    /// bound stays.
    void force_mock(const std::function<nlohmann::json(const EndpointProfile&)>& options_for = {});

    bool has_profile(std::string_view name) const;
    const EndpointProfile& profile(std::string_view name) const;
    const RateLimiter& limiter(std::string_view name) const;

    /// One generation. Retries transient failures with exponential backoff,
    /// then throws TransportError / QuotaError.
    GenerationResponse generate(const std::string& profile, const RenderedMessage& message,
                                const DecodingParams& overrides = {}, int sample_index = 0);

    GatewayStats stats() const;

private:
    struct Slot {
        EndpointProfile profile;
        std::shared_ptr<Backend> backend;
        std::unique_ptr<RateLimiter> limiter;
    };
    Slot& slot(std::string_view name);
    const Slot& slot(std::string_view name) const;

    std::map<std::string, Slot, std::less<>> slots_;
    std::unique_ptr<ResponseCache> cache_;
    std::shared_ptr<CallLog> call_log_;

    std::atomic<std::size_t> requests_{0};
    std::atomic<std::size_t> cache_hits_{0};
    std::atomic<std::size_t> network_calls_{0};
    std::atomic<std::size_t> retries_{0};
    std::atomic<std::size_t> failures_{0};
};

}  // namespace kbgate
