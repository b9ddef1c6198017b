// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <cstdlib>

#include <fmt/format.h>

#include "kbgate/error.hpp"
#include "kbgate/gateway.hpp"
#include "kbgate/http_util.hpp"

namespace kbgate {

using nlohmann::json;

namespace http {

ParsedUrl parse_url(const std::string& url) {
    ParsedUrl out;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError(fmt::format("URL without scheme: {}", url));
    auto host_end = url.find('/', scheme_end + 3);
    out.origin = url.substr(0, host_end);
    out.path = host_end == std::string::npos ? std::string{} : url.substr(host_end);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    return out;
}

Reply post_json(const std::string& origin, const std::string& path, const json& body,
                const std::vector<std::pair<std::string, std::string>>& headers, double timeout_s) {
    httplib::Client client(origin);
    auto secs = static_cast<time_t>(timeout_s);
    auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path, h, body.dump(), "application/json");
    double elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (!res) throw TransportError(fmt::format("{}{}: {}", origin, path, httplib::to_string(res.error())));
    return Reply{res->status, res->body, elapsed};
}

void raise_for_status(const Reply& reply, const std::string& what) {
    if (reply.status == 429) throw RateLimitedError(fmt::format("{}: HTTP 429", what));
    if (reply.status == 401 || reply.status == 403) throw AuthError(fmt::format("{}: HTTP {}", what, reply.status));
    if (reply.status >= 500) throw TransportError(fmt::format("{}: HTTP {}", what, reply.status));
    if (reply.status < 200 || reply.status >= 300) {
        throw MalformedReplyError(fmt::format("{}: HTTP {}: {}", what, reply.status, reply.body.substr(0, 200)));
    }
}

std::vector<std::pair<std::string, std::string>> auth_headers(const std::string& env_var, const std::string& who) {
    if (env_var.empty()) return {};
    const char* value = std::getenv(env_var.c_str());
    if (!value || !*value) throw AuthError(fmt::format("{}: environment variable {} is not set", who, env_var));
    return {{"Authorization", std::string("Bearer ") + value}};
}

}  // namespace http

json HttpBackend::request_body(const EndpointProfile& profile, const GenerationRequest& request) {
    json content = json::array();
    for (const auto& seg : request.message.segments) {
        if (seg.kind == Segment::Kind::Text) {
            content.push_back(json{{"type", "text"}, {"text", seg.text}});
        } else {
            content.push_back(json{{"type", "image_url"}, {"image_url", {{"url", seg.image.to_request_url()}}}});
        }
    }
    json body{{"model", profile.model_name},
              {"messages", json::array({json{{"role", "user"}, {"content", std::move(content)}}})},
              {"stream", false}};
    const json params = request.params.to_json();
    for (const auto& [k, v] : params.items()) body[k] = v;
    return body;
}

GenerationResponse HttpBackend::parse_reply(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw MalformedReplyError(fmt::format("reply is not JSON: {}", e.what()));
    }
    if (!j.contains("choices") || !j.at("choices").is_array() || j.at("choices").empty()) {
        throw MalformedReplyError("reply has no choices");
    }
    const auto& choice = j.at("choices").at(0);
    GenerationResponse r;
    const json* content = nullptr;
    if (choice.contains("message") && choice.at("message").contains("content")) content = &choice.at("message").at("content");
    if (!content) throw MalformedReplyError("reply choice has no message content");
    if (content->is_string()) {
        r.text = content->get<std::string>();
    } else if (content->is_array()) {
        for (const auto& part : *content) {
            if (part.value("type", "") == "text") r.text += part.value("text", "");
        }
    } else if (!content->is_null()) {
        throw MalformedReplyError("unsupported message content type");
    }
    r.finish_reason = choice.contains("finish_reason") && choice.at("finish_reason").is_string()
                          ? choice.at("finish_reason").get<std::string>()
                          : "stop";
    if (r.text.empty() && r.finish_reason == "stop") r.finish_reason = "empty";
    if (j.contains("usage")) r.metadata["usage"] = j.at("usage");
    if (j.contains("id")) r.metadata["id"] = j.at("id");
    return r;
}

GenerationResponse HttpBackend::complete(const EndpointProfile& profile, const GenerationRequest& request,
                                         const std::string&) {
    auto url = http::parse_url(profile.base_url);
    auto headers = http::auth_headers(profile.auth_env, profile.name);
    auto reply = http::post_json(url.origin, url.path + "/chat/completions", request_body(profile, request), headers,
                                 profile.timeout_s);
    http::raise_for_status(reply, profile.name);
    GenerationResponse r = parse_reply(reply.body);
    r.latency_ms = reply.elapsed_ms;
    r.metadata["backend"] = "http";
    return r;
}

}  // namespace kbgate
