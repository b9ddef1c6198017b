// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// R-fold sampling of the target VLLM, judge scoring, mean aggregation and
// per-source dataset statistics.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbgate/gateway.hpp"
#include "kbgate/prompt.hpp"
#include "kbgate/query.hpp"
#include "kbgate/score.hpp"

namespace kbgate {

class CheckpointLog;

struct Sample {
    int index = 0;
    std::string text;
    double latency_ms = 0.0;
};

struct SampleSet {
    std::string query_id;
    int requested_R = 0;
    std::vector<Sample> samples;  // sorted by index
    std::optional<std::string> error;

    bool complete() const { return static_cast<int>(samples.size()) == requested_R; }
};

void to_json(nlohmann::json& j, const SampleSet& s);
void from_json(const nlohmann::json& j, SampleSet& s);

struct JudgeScore {
    int index = 0;
    std::optional<double> score;  // empty = invalid
    std::string raw;              // last judge reply
};

struct JudgedQuery {
    std::string query_id;
    std::string source;
    std::vector<JudgeScore> scores;  // sorted by index
    int valid_count = 0;
    int invalid_count = 0;
    double mean_score = 0.0;
};

void to_json(nlohmann::json& j, const JudgedQuery& q);
void from_json(const nlohmann::json& j, JudgedQuery& q);

/// What a sampling run needs from the rest of the system.
struct SamplingSetup {
    ModelGateway* gateway = nullptr;
    const TemplateSet* templates = nullptr;
    std::string sampled_profile;
    std::string judge_profile;
    ScoreScale scale;
    int judge_retries = 2;
    int min_valid = 1;
    std::size_t parallelism = 8;
};

/// Draws sample `index` for a query (profile decoding defaults, seed offset
/// by the index when the profile sets one).
Sample draw_sample(const QueryRecord& query, const SamplingSetup& setup, int index);

/// R draws with bounded parallel fan-out. R < 1 throws ValidationError.
/// Endpoint failures leave the set incomplete with `error` set.
SampleSet sample_query(const QueryRecord& query, const SamplingSetup& setup, int R);

struct JudgeOutcome {
    std::optional<double> score;
    std::vector<std::string> replies;  // one per attempt
};

/// Renders the judge prompt, parses the first number of the reply and
/// clamps it to the scale. Unparsable replies are retried `judge_retries`
/// times (each attempt is a distinct request) before the score is invalid.
/// Throws ValidationError if the query has no gold answer.
JudgeOutcome judge_sample(const QueryRecord& query, const std::string& sample_text, const SamplingSetup& setup);

/// Mean of the valid scores; empty if fewer than `min_valid` are valid.
std::optional<double> aggregate(std::span<const std::optional<double>> scores, int min_valid = 1);

/// Assembles a JudgedQuery; empty when the query must be dropped.
std::optional<JudgedQuery> make_judged_query(const QueryRecord& query, std::vector<JudgeScore> scores,
                                             int min_valid);

struct SourceStats {
    std::string source;
    std::string model;
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;  // population
};

/// One row per source (sorted), mean of per-query means and population std.
/// Throws ValidationError on an empty collection.
std::vector<SourceStats> dataset_stats(std::span<const JudgedQuery> judged, const std::string& model = "");

std::string stats_csv(std::span<const SourceStats> rows);
/// Aligned table: Source | # Samples | Model | Avg. Score ± std.
std::string stats_table(std::span<const SourceStats> rows);

struct DroppedQuery {
    std::string query_id;
    std::string reason;
};

struct BuildDatasetResult {
    std::vector<SampleSet> sample_sets;
    std::vector<JudgedQuery> judged;
    std::vector<DroppedQuery> dropped;
    std::vector<SourceStats> stats;
    std::size_t failed_units = 0;
};

/// Sample + judge + aggregate over a corpus. With a checkpoint log, done
/// units are skipped and every finished (query, stage, index) is appended.
/// Output order is by query id regardless of scheduling.
BuildDatasetResult build_dataset(std::span<const QueryRecord> queries, const SamplingSetup& setup, int R,
                                 CheckpointLog* checkpoints = nullptr);

/// samples.jsonl, judged.jsonl, dropped.jsonl, stats.csv, stats.txt under `dir`.
std::vector<std::filesystem::path> write_build_outputs(const BuildDatasetResult& result,
                                                       const std::filesystem::path& dir);

std::vector<JudgedQuery> load_judged(const std::filesystem::path& path);

}  // namespace kbgate
