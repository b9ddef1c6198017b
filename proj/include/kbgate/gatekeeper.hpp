// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Boundary-model queries and the retrieve/skip indicator.

#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kbgate/gateway.hpp"
#include "kbgate/prompt.hpp"
#include "kbgate/query.hpp"
#include "kbgate/score.hpp"

namespace kbgate {

enum class GateVariant { None, All, Prompt, Hkb, Skb };

std::string_view to_string(GateVariant v);
GateVariant parse_gate_variant(std::string_view s);

struct GateDecision {
    std::string query_id;
    GateVariant variant = GateVariant::None;
    std::string raw_output;
    std::optional<bool> verdict;        // hkb, prompt
    std::optional<double> score;        // skb
    std::optional<double> epsilon;      // skb
    bool retrieve = false;
    double duration_ms = 0.0;
    bool fallback_used = false;
};

void to_json(nlohmann::json& j, const GateDecision& d);
void from_json(const nlohmann::json& j, GateDecision& d);

/// Leading word, case-insensitive, trailing punctuation ignored.
std::optional<bool> parse_hard_verdict(std::string_view output);
/// First number in the output, clamped to the scale.
std::optional<double> parse_soft_verdict(std::string_view output, const ScoreScale& scale);

/// SKB inference threshold when none is given.
inline constexpr double kDefaultSkbEpsilon = 4.5;

/// Retrieve iff score >= epsilon.
inline bool soft_indicator(double score, double epsilon) { return score >= epsilon; }

struct BoundaryOutput {
    std::string raw;
    double latency_ms = 0.0;
};

struct HardPrediction {
    BoundaryOutput output;
    std::optional<bool> verdict;
};

struct SoftPrediction {
    BoundaryOutput output;
    std::optional<double> score;
};

struct GateProfiles {
    std::string hard_boundary;
    std::string soft_boundary;
    /// The sampled VLLM, asked directly by the prompt-based baseline.
    std::string sampled;
};

class Gatekeeper {
public:
    Gatekeeper(ModelGateway& gateway, const TemplateSet& templates, GateProfiles profiles, ScoreScale scale);

    HardPrediction predict_hard(const QueryRecord& query) const;
    SoftPrediction predict_soft(const QueryRecord& query) const;
    /// {verdict, flagged}: parse failure gives false with flagged set.
    HardPrediction prompt_based(const QueryRecord& query) const;

    /// Applies the indicator for `variant`. Parse failures of hkb/skb fall back
    /// to retrieve. Endpoint failures propagate. skb requires epsilon >= s_w.
    GateDecision decide(const QueryRecord& query, GateVariant variant, std::optional<double> epsilon = {}) const;

    const ScoreScale& scale() const { return scale_; }
    const GateProfiles& profiles() const { return profiles_; }

private:
    BoundaryOutput ask(const std::string& profile, TemplateVariant variant, const QueryRecord& query) const;

    ModelGateway& gateway_;
    const TemplateSet& templates_;
    GateProfiles profiles_;
    ScoreScale scale_;
};

/// Pure indicator on an existing soft prediction (no model call).
GateDecision decide_soft(const std::string& query_id, const SoftPrediction& prediction, double epsilon,
                         const ScoreScale& scale);
GateDecision decide_hard(const std::string& query_id, const HardPrediction& prediction);

}  // namespace kbgate
