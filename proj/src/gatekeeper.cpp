// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/gatekeeper.hpp"

#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "kbgate/error.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

using nlohmann::json;

std::string_view to_string(GateVariant v) {
    switch (v) {
        case GateVariant::None: return "none";
        case GateVariant::All: return "all";
        case GateVariant::Prompt: return "prompt";
        case GateVariant::Hkb: return "hkb";
        case GateVariant::Skb: return "skb";
    }
    return "?";
}

GateVariant parse_gate_variant(std::string_view s) {
    for (auto v : {GateVariant::None, GateVariant::All, GateVariant::Prompt, GateVariant::Hkb, GateVariant::Skb}) {
        if (to_string(v) == s) return v;
    }
    throw ValidationError(fmt::format("unknown variant '{}' (none|all|prompt|hkb|skb)", s));
}

void to_json(json& j, const GateDecision& d) {
    j = json{{"query_id", d.query_id},
             {"variant", to_string(d.variant)},
             {"raw_output", d.raw_output},
             {"retrieve", d.retrieve},
             {"duration_ms", d.duration_ms},
             {"fallback_used", d.fallback_used}};
    if (d.verdict) j["verdict"] = *d.verdict;
    else if (d.score) j["verdict"] = *d.score;
    else j["verdict"] = nullptr;
    j["epsilon"] = d.epsilon ? json(*d.epsilon) : json(nullptr);
}

void from_json(const json& j, GateDecision& d) {
    d = GateDecision{};
    d.query_id = j.at("query_id").get<std::string>();
    d.variant = parse_gate_variant(j.at("variant").get<std::string>());
    d.raw_output = j.value("raw_output", "");
    d.retrieve = j.at("retrieve").get<bool>();
    d.duration_ms = j.value("duration_ms", 0.0);
    d.fallback_used = j.value("fallback_used", false);
    if (j.contains("verdict")) {
        const auto& v = j.at("verdict");
        if (v.is_boolean()) d.verdict = v.get<bool>();
        else if (v.is_number()) d.score = v.get<double>();
    }
    if (j.contains("epsilon") && !j.at("epsilon").is_null()) d.epsilon = j.at("epsilon").get<double>();
}

std::optional<bool> parse_hard_verdict(std::string_view output) {
    auto s = text::trim(output);
    std::size_t end = 0;
    while (end < s.size() && std::isalpha(static_cast<unsigned char>(s[end]))) ++end;
    std::string word;
    for (char c : s.substr(0, end)) word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    // The rest of the leading token may only be punctuation.
    std::size_t tok_end = end;
    while (tok_end < s.size() && !std::isspace(static_cast<unsigned char>(s[tok_end]))) {
        if (!std::ispunct(static_cast<unsigned char>(s[tok_end]))) return std::nullopt;
        ++tok_end;
    }
    if (word == "true") return true;
    if (word == "false") return false;
    return std::nullopt;
}

std::optional<double> parse_soft_verdict(std::string_view output, const ScoreScale& scale) {
    auto v = parse_first_number(output);
    if (!v) return std::nullopt;
    return scale.clamp(*v);
}

Gatekeeper::Gatekeeper(ModelGateway& gateway, const TemplateSet& templates, GateProfiles profiles, ScoreScale scale)
    : gateway_(gateway), templates_(templates), profiles_(std::move(profiles)), scale_(scale) {
    scale_.validate();
}

BoundaryOutput Gatekeeper::ask(const std::string& profile, TemplateVariant variant, const QueryRecord& query) const {
    if (profile.empty()) throw ConfigError(fmt::format("no profile configured for {}", to_string(variant)));
    const auto& p = gateway_.profile(profile);
    auto tpl = templates_.get(variant, p.dialect);
    auto resp = gateway_.generate(profile, render_prompt(tpl, query), DecodingParams::greedy(), 0);
    return BoundaryOutput{resp.text, resp.latency_ms};
}

HardPrediction Gatekeeper::predict_hard(const QueryRecord& query) const {
    auto out = ask(profiles_.hard_boundary, TemplateVariant::Hard, query);
    auto verdict = parse_hard_verdict(out.raw);
    return HardPrediction{std::move(out), verdict};
}

SoftPrediction Gatekeeper::predict_soft(const QueryRecord& query) const {
    auto out = ask(profiles_.soft_boundary, TemplateVariant::Soft, query);
    auto score = parse_soft_verdict(out.raw, scale_);
    return SoftPrediction{std::move(out), score};
}

HardPrediction Gatekeeper::prompt_based(const QueryRecord& query) const {
    auto out = ask(profiles_.sampled, TemplateVariant::PromptBaseline, query);
    auto verdict = parse_hard_verdict(out.raw);
    return HardPrediction{std::move(out), verdict};
}

GateDecision decide_soft(const std::string& query_id, const SoftPrediction& prediction, double epsilon,
                         const ScoreScale& scale) {
    if (!std::isfinite(epsilon) || epsilon < scale.wrong) {
        throw RangeError(fmt::format("skb epsilon {} below s_w = {}", epsilon, scale.wrong));
    }
    GateDecision d;
    d.query_id = query_id;
    d.variant = GateVariant::Skb;
    d.raw_output = prediction.output.raw;
    d.duration_ms = prediction.output.latency_ms;
    d.epsilon = epsilon;
    if (prediction.score) {
        d.score = prediction.score;
        d.retrieve = soft_indicator(*prediction.score, epsilon);
    } else {
        d.retrieve = true;
        d.fallback_used = true;
    }
    return d;
}

GateDecision decide_hard(const std::string& query_id, const HardPrediction& prediction) {
    GateDecision d;
    d.query_id = query_id;
    d.variant = GateVariant::Hkb;
    d.raw_output = prediction.output.raw;
    d.duration_ms = prediction.output.latency_ms;
    if (prediction.verdict) {
        d.verdict = prediction.verdict;
        d.retrieve = *prediction.verdict;
    } else {
        d.retrieve = true;
        d.fallback_used = true;
    }
    return d;
}

GateDecision Gatekeeper::decide(const QueryRecord& query, GateVariant variant, std::optional<double> epsilon) const {
    switch (variant) {
        case GateVariant::None:
        case GateVariant::All: {
            GateDecision d;
            d.query_id = query.id;
            d.variant = variant;
            d.retrieve = variant == GateVariant::All;
            return d;
        }
        case GateVariant::Hkb: return decide_hard(query.id, predict_hard(query));
        case GateVariant::Skb: {
            double eps = epsilon.value_or(kDefaultSkbEpsilon);
            if (!std::isfinite(eps) || eps < scale_.wrong) {
                throw RangeError(fmt::format("skb epsilon {} below s_w = {}", eps, scale_.wrong));
            }
            return decide_soft(query.id, predict_soft(query), eps, scale_);
        }
        case GateVariant::Prompt: {
            auto p = prompt_based(query);
            GateDecision d;
            d.query_id = query.id;
            d.variant = GateVariant::Prompt;
            d.raw_output = p.output.raw;
            d.duration_ms = p.output.latency_ms;
            d.verdict = p.verdict.value_or(false);
            d.retrieve = *d.verdict;
            d.fallback_used = !p.verdict.has_value();
            return d;
        }
    }
    throw ValidationError("unknown gate variant");
}

}  // namespace kbgate
