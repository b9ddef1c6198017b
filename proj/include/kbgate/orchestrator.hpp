// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Answering under the five run modes with per-stage timing.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbgate/gatekeeper.hpp"
#include "kbgate/gateway.hpp"
#include "kbgate/retrieval.hpp"

namespace kbgate {

class CheckpointLog;

/// none: parametric answer. all: always retrieve. prompt / hkb / skb: gated.
using AnswerMode = GateVariant;

struct AnswerRecord {
    std::string query_id;
    AnswerMode mode = AnswerMode::None;
    std::string answer_text;
    bool retrieved = false;
    double gate_ms = 0.0;
    double retrieval_ms = 0.0;
    double prebuild_ms = 0.0;  // gate_ms + retrieval_ms
    double answer_ms = 0.0;
    std::optional<std::string> context_hash;
    std::optional<std::string> error;

    bool failed() const { return error.has_value(); }
};

void to_json(nlohmann::json& j, const AnswerRecord& r);
void from_json(const nlohmann::json& j, AnswerRecord& r);

struct AnswerOptions {
    std::string answer_profile;
    std::optional<double> epsilon;  // skb; defaults to 4.5 when unset
    std::size_t context_budget = 4000;
};

struct AnswerOutcome {
    AnswerRecord record;
    std::optional<GateDecision> decision;
};

class AnswerOrchestrator {
public:
    AnswerOrchestrator(ModelGateway& gateway, Retriever& retriever, const Gatekeeper& gatekeeper,
                       const TemplateSet& templates, AnswerOptions options);

    /// Never throws for endpoint failures: the record carries the error.
    AnswerOutcome answer(const QueryRecord& query, AnswerMode mode);

    const AnswerOptions& options() const { return options_; }

private:
    ModelGateway& gateway_;
    Retriever& retriever_;
    const Gatekeeper& gatekeeper_;
    const TemplateSet& templates_;
    AnswerOptions options_;
};

struct TimingSummary {
    AnswerMode mode = AnswerMode::None;
    std::size_t rows = 0;
    std::size_t failed = 0;
    std::size_t retrieved = 0;
    double total_gate_ms = 0.0;
    double total_retrieval_ms = 0.0;
    double total_prebuild_ms = 0.0;
    double mean_prebuild_ms = 0.0;
    double total_answer_ms = 0.0;
};

/// Sums over rows in the given order.
TimingSummary summarize_timing(AnswerMode mode, std::span<const AnswerRecord> records);
std::string timing_csv(std::span<const TimingSummary> rows);

struct BenchmarkResult {
    std::map<AnswerMode, std::vector<AnswerRecord>> records;  // sorted by query id
    std::map<AnswerMode, std::vector<GateDecision>> decisions;
    std::vector<TimingSummary> timing;
    std::size_t failures = 0;
};

/// One record per (query, mode). Checkpointed per (query, "answer:<mode>").
BenchmarkResult run_benchmark(std::span<const QueryRecord> queries, std::span<const AnswerMode> modes,
                              AnswerOrchestrator& orchestrator, std::size_t parallelism,
                              CheckpointLog* checkpoints = nullptr);

/// answers_<mode>.jsonl, gate_<mode>.jsonl (gated modes), errors.jsonl, timing.csv.
std::vector<std::filesystem::path> write_benchmark(const BenchmarkResult& result, const std::filesystem::path& dir);

std::vector<AnswerRecord> load_answers(const std::filesystem::path& path);

}  // namespace kbgate
