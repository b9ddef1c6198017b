// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace kbgate::http {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // no trailing slash
};

ParsedUrl parse_url(const std::string& url);

struct Reply {
    int status = 0;
    std::string body;
    double elapsed_ms = 0.0;
};

/// Throws TransportError when no reply arrives.
Reply post_json(const std::string& origin, const std::string& path, const nlohmann::json& body,
                const std::vector<std::pair<std::string, std::string>>& headers, double timeout_s);

/// 429 -> RateLimitedError, 401/403 -> AuthError, 5xx -> TransportError,
/// other non-2xx -> MalformedReplyError.
void raise_for_status(const Reply& reply, const std::string& what);

/// Bearer header from an environment variable; AuthError when unset.
std::vector<std::pair<std::string, std::string>> auth_headers(const std::string& env_var, const std::string& who);

}  // namespace kbgate::http
