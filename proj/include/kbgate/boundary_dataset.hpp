// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hard/soft boundary labels and SFT training exports.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kbgate/prompt.hpp"
#include "kbgate/query.hpp"
#include "kbgate/sampling.hpp"
#include "kbgate/score.hpp"

namespace kbgate {

struct BoundaryLabel {
    std::string query_id;
    /// Absent for human annotations.
    std::optional<double> mean_score;
    /// true = outside the boundary, search needed.
    bool hard = false;
    std::optional<double> soft;
    std::optional<double> epsilon;
};

void to_json(nlohmann::json& j, const BoundaryLabel& l);
void from_json(const nlohmann::json& j, BoundaryLabel& l);

/// One label per judged query, sorted by query id.
std::vector<BoundaryLabel> build_labels(std::span<const JudgedQuery> judged, double epsilon, const ScoreScale& scale);

enum class SftVariant { Hard, Soft };
std::string_view to_string(SftVariant v);
SftVariant parse_sft_variant(std::string_view s);

/// Soft target text: one decimal, half away from zero ("4.18" -> "4.2").
std::string format_soft_target(double soft);

/// Suggested trainer settings recorded alongside every export.
nlohmann::json trainer_hyperparameters();

struct SftRecord {
    SftVariant variant = SftVariant::Hard;
    std::string prompt;
    std::vector<ImageRef> images;
    std::string target;
    nlohmann::json meta = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const SftRecord& r);

struct SftExportOptions {
    SftVariant variant = SftVariant::Hard;
    ScoreScale scale;
    std::string dialect = "plain";
    /// Downsample the majority hard class (deterministic). Off by default.
    bool balance = false;
};

/// Builds records sorted by query id. Throws IntegrityError when a label's
/// query is missing, ValidationError for soft exports of hard-only labels.
std::vector<SftRecord> make_sft_records(std::span<const BoundaryLabel> labels, std::span<const QueryRecord> queries,
                                        const TemplateSet& templates, const SftExportOptions& options);

struct SftExportResult {
    std::filesystem::path data;
    std::filesystem::path manifest;
    std::size_t records = 0;
};

/// Writes `out` (JSONL) and `out`.manifest.json.
SftExportResult export_sft(std::span<const BoundaryLabel> labels, std::span<const QueryRecord> queries,
                           const TemplateSet& templates, const SftExportOptions& options,
                           const std::filesystem::path& out);

/// Reads human search-needed annotations: JSONL {"query_id", "search_needed"}
/// or CSV `query_id,label`. Equal duplicates collapse; conflicting ones and
/// unknown ids throw IntegrityError; non-boolean values throw ParseError.
std::vector<BoundaryLabel> import_human_labels(const std::filesystem::path& path,
                                               std::span<const QueryRecord> queries);

std::vector<BoundaryLabel> load_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const BoundaryLabel> labels);

}  // namespace kbgate
