// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Metrics, search ratio, epsilon sweeps, held-in accuracy, judge consistency
// and report tables.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbgate/boundary_dataset.hpp"
#include "kbgate/gatekeeper.hpp"
#include "kbgate/orchestrator.hpp"
#include "kbgate/sampling.hpp"

namespace kbgate {

class CheckpointLog;

/// (s - s_w) / (s_c - s_w) * 100.
double rescale_to_percent(double judge_score, const ScoreScale& scale);

/// Judge score rescaled to 0..100; empty when the judge never parsed.
std::optional<double> llm_metric(const std::string& prediction, const QueryRecord& query,
                                 const SamplingSetup& judge);

/// 100 * |multiset(pred) ∩ multiset(gold)| / |pred| after normalization.
double token_accuracy(std::string_view prediction, std::string_view gold);

/// 100 * retrieves / n. Empty input throws ValidationError.
double search_ratio(std::span<const GateDecision> decisions);
double search_ratio(std::span<const bool> retrieves);

/// Per-answer metrics.
struct ItemMetrics {
    std::string query_id;
    std::string source;
    std::optional<double> llm;
    double token_acc = 0.0;
    bool retrieved = false;
    bool failed = false;
};

void to_json(nlohmann::json& j, const ItemMetrics& m);
void from_json(const nlohmann::json& j, ItemMetrics& m);

/// Scores each record (judge + token accuracy), sorted by query id. With a
/// checkpoint log, units (query, "eval:<tag>") are reused.
std::vector<ItemMetrics> evaluate_records(std::span<const AnswerRecord> records, std::span<const QueryRecord> queries,
                                          const SamplingSetup& judge, const std::string& tag,
                                          CheckpointLog* checkpoints = nullptr);

struct MetricAggregate {
    std::size_t n = 0;            // non-failed rows
    std::size_t failures = 0;
    std::size_t llm_evaluated = 0;
    double llm_total = 0.0;
    double token_total = 0.0;
    double llm = 0.0;             // means, 0..100
    double token_acc = 0.0;
    double search_ratio = 0.0;
};

/// Sums in the given order.
MetricAggregate aggregate_metrics(std::span<const ItemMetrics> items);

struct SweepRow {
    double epsilon = 0.0;
    double ratio = 0.0;
    double llm = 0.0;
    double token_acc = 0.0;
};

/// For each epsilon, picks all-RAG metrics where the soft score (by query
/// id) is >= epsilon and no-RAG metrics otherwise. `none` and `all` must be
/// aligned by query id. A missing soft score (parse failure) retrieves.
std::vector<SweepRow> epsilon_sweep(std::span<const double> grid,
                                    const std::map<std::string, std::optional<double>>& soft_scores,
                                    std::span<const ItemMetrics> none, std::span<const ItemMetrics> all);

/// Parses "start:stop:step" (inclusive) or a comma list.
std::vector<double> parse_grid(std::string_view spec);
std::string sweep_csv(std::span<const SweepRow> rows);

/// Boundary-model output on a held-in item.
struct HeldInPrediction {
    std::string query_id;
    std::optional<bool> hard;
    std::optional<double> soft;
};

/// hard: exact match rate; soft: |pred - label| <= tolerance. Unparsed
/// predictions count as wrong. Misaligned ids throw IntegrityError.
double held_in_accuracy(std::span<const HeldInPrediction> predictions, std::span<const BoundaryLabel> labels,
                        SftVariant variant, double tolerance = 0.5);

struct ConsistencyRow {
    std::string setting;
    double judge_a = 0.0;
    double judge_b = 0.0;
    double gap = 0.0;
};

struct ConsistencyResult {
    std::vector<ConsistencyRow> rows;
    double max_gap = 0.0;
};

/// Scores the same answers under two judges; means are 0..100.
ConsistencyResult judge_consistency(const std::map<std::string, std::vector<AnswerRecord>>& answers,
                                    std::span<const QueryRecord> queries, const SamplingSetup& judge_a,
                                    const SamplingSetup& judge_b);
std::string consistency_csv(const ConsistencyResult& result);

struct ReportCell {
    std::string dataset;
    AnswerMode mode = AnswerMode::None;
    MetricAggregate metrics;
};

struct EvalReport {
    std::vector<ReportCell> cells;  // dataset-major, modes in canonical order
    std::vector<std::string> datasets;
    std::vector<AnswerMode> modes;

    const ReportCell* find(std::string_view dataset, AnswerMode mode) const;
};

/// Per-source tables plus an "all" aggregate.
EvalReport emit_report(const std::map<AnswerMode, std::vector<ItemMetrics>>& metrics);
/// Long format: dataset,mode,n,failures,llm,token_acc,search_ratio.
std::string report_csv(const EvalReport& report);
/// Rows per dataset and metric (LLM, Acc.); a % column after every mode.
std::string report_table(const EvalReport& report);

}  // namespace kbgate
