// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLocalServer = "http://127.0.0.1:8000/v1";

EndpointProfile builtin_profile(std::string name, std::string model) {
    EndpointProfile p;
    p.name = std::move(name);
    p.model_name = std::move(model);
    p.base_url = kLocalServer;
    return p;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, std::string_view where) {
    std::set<std::string_view> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!ok.contains(k)) throw ConfigError(fmt::format("{}: unknown key '{}'", where, k));
    }
}

void rebuild_document(AppConfig& c) {
    json profiles = json::object();
    std::set<std::string> dialects{"plain"};
    for (const auto& p : c.profiles) {
        profiles[p.name] = p.describe();
        dialects.insert(p.dialect);
    }
    json templates = json::object();
    for (const auto& d : dialects) templates[d] = c.templates.hashes(d);
    c.document = json{
        {"scale", {{"s_w", c.scale.wrong}, {"s_c", c.scale.correct}}},
        {"sampling",
         {{"samples_per_query", c.samples_per_query}, {"min_valid", c.min_valid}, {"judge_retries", c.judge_retries}}},
        {"labels", {{"label_epsilon", c.label_epsilon}}},
        {"gate", {{"skb_epsilon", c.skb_epsilon}}},
        {"held_in", {{"tolerance", c.held_in_tolerance}}},
        {"roles",
         {{"sampled", c.roles.sampled},
          {"judge", c.roles.judge},
          {"hard_boundary", c.roles.hard_boundary},
          {"soft_boundary", c.roles.soft_boundary},
          {"answer", c.roles.answer}}},
        {"profiles", profiles},
        {"retrieval",
         {{"text_provider", c.text_provider},
          {"image_provider", c.image_provider},
          {"top_k", c.top_k},
          {"context_budget", c.context_budget},
          {"policy", to_string(c.policy)},
          {"max_age_s", c.search_max_age_s ? json(*c.search_max_age_s) : json(nullptr)}}},
        {"templates", templates},
    };
}

}  // namespace

AppConfig AppConfig::defaults() {
    AppConfig c;
    c.profiles = {builtin_profile("sampled-vllm", "sampled-vllm"), builtin_profile("judge-llm", "judge-llm"),
                  builtin_profile("kb-hard", "kb-hard"), builtin_profile("kb-soft", "kb-soft")};
    c.profiles[0].defaults.temperature = 0.7;
    c.profiles[0].defaults.top_p = 0.9;
    for (std::size_t i = 1; i < c.profiles.size(); ++i) c.profiles[i].defaults = DecodingParams::greedy();
    rebuild_document(c);
    return c;
}

AppConfig AppConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return from_json(j, fs::absolute(path).parent_path());
}

AppConfig AppConfig::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    check_keys(j,
               {"scale", "label_epsilon", "skb_epsilon", "samples_per_query", "min_valid", "judge_retries",
                "held_in_tolerance", "roles", "profiles", "retrieval", "templates", "dialects"},
               "config");
    AppConfig c = defaults();
    c.base_dir = base_dir;
    try {
        if (j.contains("scale")) {
            const auto& s = j.at("scale");
            check_keys(s, {"s_w", "s_c"}, "scale");
            c.scale.wrong = s.value("s_w", c.scale.wrong);
            c.scale.correct = s.value("s_c", c.scale.correct);
        }
        c.scale.validate();
        c.label_epsilon = j.value("label_epsilon", c.label_epsilon);
        c.skb_epsilon = j.value("skb_epsilon", c.skb_epsilon);
        c.samples_per_query = j.value("samples_per_query", c.samples_per_query);
        c.min_valid = j.value("min_valid", c.min_valid);
        c.judge_retries = j.value("judge_retries", c.judge_retries);
        c.held_in_tolerance = j.value("held_in_tolerance", c.held_in_tolerance);
        if (j.contains("roles")) {
            const auto& r = j.at("roles");
            check_keys(r, {"sampled", "judge", "hard_boundary", "soft_boundary", "answer"}, "roles");
            c.roles.sampled = r.value("sampled", c.roles.sampled);
            c.roles.judge = r.value("judge", c.roles.judge);
            c.roles.hard_boundary = r.value("hard_boundary", c.roles.hard_boundary);
            c.roles.soft_boundary = r.value("soft_boundary", c.roles.soft_boundary);
            c.roles.answer = r.value("answer", r.value("sampled", c.roles.answer));
        }
        if (j.contains("profiles")) {
            for (const auto& pj : j.at("profiles")) {
                auto p = EndpointProfile::from_json(pj);
                auto it = std::find_if(c.profiles.begin(), c.profiles.end(),
                                       [&](const EndpointProfile& q) { return q.name == p.name; });
                if (it != c.profiles.end()) *it = std::move(p);
                else c.profiles.push_back(std::move(p));
            }
        }
        if (j.contains("retrieval")) {
            const auto& r = j.at("retrieval");
            check_keys(r, {"text_provider", "image_provider", "top_k", "context_budget", "policy", "max_age_s"},
                       "retrieval");
            if (r.contains("text_provider")) c.text_provider = r.at("text_provider");
            if (r.contains("image_provider")) c.image_provider = r.at("image_provider");
            c.top_k = r.value("top_k", c.top_k);
            c.context_budget = r.value("context_budget", c.context_budget);
            if (r.contains("policy")) c.policy = parse_retrieval_policy(r.at("policy").get<std::string>());
            if (r.contains("max_age_s") && !r.at("max_age_s").is_null()) c.search_max_age_s = r.at("max_age_s").get<double>();
        }
        c.templates = TemplateSet::from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config: {}", e.what()));
    }
    if (!c.scale.contains(c.label_epsilon)) throw ConfigError(fmt::format("label_epsilon {} outside the scale", c.label_epsilon));
    if (c.skb_epsilon < c.scale.wrong) throw ConfigError(fmt::format("skb_epsilon {} below s_w", c.skb_epsilon));
    if (c.samples_per_query < 1) throw ConfigError("samples_per_query must be >= 1");
    if (c.min_valid < 1) throw ConfigError("min_valid must be >= 1");
    if (c.judge_retries < 0) throw ConfigError("judge_retries must be >= 0");
    if (c.top_k == 0) throw ConfigError("top_k must be positive");
    if (c.context_budget == 0) throw ConfigError("context_budget must be positive");
    for (const auto* role : {&c.roles.sampled, &c.roles.judge, &c.roles.hard_boundary, &c.roles.soft_boundary,
                             &c.roles.answer}) {
        (void)c.profile(*role);
    }
    rebuild_document(c);
    return c;
}

const EndpointProfile& AppConfig::profile(const std::string& name) const {
    for (const auto& p : profiles) {
        if (p.name == name) return p;
    }
    throw ConfigError(fmt::format("unknown endpoint profile '{}'", name));
}

json AppConfig::mock_options_for(const EndpointProfile& profile) const {
    json options = profile.mock.is_object() ? profile.mock : json::object();
    if (!options.contains("kind")) {
        std::string kind = "answer";
        if (profile.name == roles.judge) kind = "judge";
        else if (profile.name == roles.hard_boundary) kind = "hkb";
        else if (profile.name == roles.soft_boundary) kind = "skb";
        options["kind"] = kind;
    }
    return options;
}

std::string AppConfig::hash(const std::vector<std::string>& keys, const json& extra) const {
    json picked = json::object();
    for (const auto& k : keys) {
        if (!document.contains(k)) throw ConfigError(fmt::format("no config section '{}'", k));
        picked[k] = document.at(k);
    }
    return sha256_hex(json{{"sections", picked}, {"extra", extra}}.dump());
}

}  // namespace kbgate
