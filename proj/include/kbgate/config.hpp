// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbgate/gateway.hpp"
#include "kbgate/prompt.hpp"
#include "kbgate/retrieval.hpp"
#include "kbgate/score.hpp"

namespace kbgate {

/// Which profile plays which part in the workflow. The boundary profiles
/// are independent of the answering profile, so a boundary model trained on
/// one VLLM's samples can gate another VLLM.
struct Roles {
    std::string sampled = "sampled-vllm";
    std::string judge = "judge-llm";
    std::string hard_boundary = "kb-hard";
    std::string soft_boundary = "kb-soft";
    std::string answer = "sampled-vllm";
};

struct AppConfig {
    ScoreScale scale;
    double label_epsilon = 4.0;
    double skb_epsilon = 4.5;
    int samples_per_query = 30;
    int min_valid = 1;
    int judge_retries = 2;
    double held_in_tolerance = 0.5;

    Roles roles;
    std::vector<EndpointProfile> profiles;

    nlohmann::json text_provider = {{"type", "mock"}};
    nlohmann::json image_provider = {{"type", "mock"}};
    std::size_t top_k = 5;
    std::size_t context_budget = 4000;
    RetrievalPolicy policy = RetrievalPolicy::Auto;
    std::optional<double> search_max_age_s;

    TemplateSet templates;
    std::filesystem::path base_dir;
    /// Normalized, secret-free document used for hashing.
    nlohmann::json document;

    /// Built-in profiles and templates; every endpoint unconfigured.
    static AppConfig defaults();
    /// Overlays a JSON config file on the defaults.
    static AppConfig load(const std::filesystem::path& path);
    static AppConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

    const EndpointProfile& profile(const std::string& name) const;
    /// Mock options for a profile under --mock: its own "mock" block, or a
    /// default kind inferred from its role.
    nlohmann::json mock_options_for(const EndpointProfile& profile) const;

    /// SHA-256 of the sections named in `keys` plus `extra`.
    std::string hash(const std::vector<std::string>& keys, const nlohmann::json& extra = {}) const;
};

}  // namespace kbgate
