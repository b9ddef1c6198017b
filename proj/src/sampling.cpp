// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/sampling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include <fmt/format.h>

#include "kbgate/error.hpp"
#include "kbgate/parallel.hpp"
#include "kbgate/runstore.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const SampleSet& s) {
    json samples = json::array();
    for (const auto& x : s.samples) {
        samples.push_back(json{{"index", x.index}, {"text", x.text}, {"latency_ms", x.latency_ms}});
    }
    j = json{{"query_id", s.query_id}, {"requested_R", s.requested_R}, {"complete", s.complete()}, {"samples", samples}};
    if (s.error) j["error"] = *s.error;
}

void from_json(const json& j, SampleSet& s) {
    s = SampleSet{};
    s.query_id = j.at("query_id").get<std::string>();
    s.requested_R = j.at("requested_R").get<int>();
    for (const auto& x : j.at("samples")) {
        s.samples.push_back(Sample{x.at("index").get<int>(), x.at("text").get<std::string>(), x.value("latency_ms", 0.0)});
    }
    if (j.contains("error")) s.error = j.at("error").get<std::string>();
}

void to_json(json& j, const JudgedQuery& q) {
    json scores = json::array();
    for (const auto& s : q.scores) {
        scores.push_back(json{{"index", s.index}, {"score", s.score ? json(*s.score) : json(nullptr)}, {"raw", s.raw}});
    }
    j = json{{"query_id", q.query_id},  {"source", q.source},           {"scores", scores},
             {"valid_count", q.valid_count}, {"invalid_count", q.invalid_count}, {"mean_score", q.mean_score}};
}

void from_json(const json& j, JudgedQuery& q) {
    q = JudgedQuery{};
    q.query_id = j.at("query_id").get<std::string>();
    q.source = j.value("source", "");
    for (const auto& s : j.at("scores")) {
        JudgeScore js;
        js.index = s.at("index").get<int>();
        if (!s.at("score").is_null()) js.score = s.at("score").get<double>();
        js.raw = s.value("raw", "");
        q.scores.push_back(std::move(js));
    }
    q.valid_count = j.at("valid_count").get<int>();
    q.invalid_count = j.at("invalid_count").get<int>();
    q.mean_score = j.at("mean_score").get<double>();
}

Sample draw_sample(const QueryRecord& query, const SamplingSetup& setup, int index) {
    const auto& profile = setup.gateway->profile(setup.sampled_profile);
    auto tpl = setup.templates->get(TemplateVariant::Answer, profile.dialect);
    DecodingParams overrides;
    if (profile.defaults.seed) overrides.seed = *profile.defaults.seed + index;
    auto resp = setup.gateway->generate(setup.sampled_profile, render_prompt(tpl, query), overrides, index);
    return Sample{index, resp.text, resp.latency_ms};
}

SampleSet sample_query(const QueryRecord& query, const SamplingSetup& setup, int R) {
    if (R < 1) throw ValidationError(fmt::format("R must be >= 1, got {}", R));
    query.validate();
    SampleSet set;
    set.query_id = query.id;
    set.requested_R = R;
    std::vector<std::optional<Sample>> drawn(static_cast<std::size_t>(R));
    std::mutex mutex;
    parallel_for(drawn.size(), setup.parallelism, [&](std::size_t i) {
        try {
            auto s = draw_sample(query, setup, static_cast<int>(i));
            drawn[i] = std::move(s);
        } catch (const Error& e) {
            std::lock_guard lock(mutex);
            if (!set.error) set.error = fmt::format("sample {}: {}", i, e.what());
        }
    });
    for (auto& s : drawn) {
        if (s) set.samples.push_back(std::move(*s));
    }
    return set;
}

JudgeOutcome judge_sample(const QueryRecord& query, const std::string& sample_text, const SamplingSetup& setup) {
    if (query.gold_answer.empty()) throw ValidationError(fmt::format("query {} has no gold answer", query.id));
    const auto& profile = setup.gateway->profile(setup.judge_profile);
    auto tpl = setup.templates->get(TemplateVariant::Judge, profile.dialect);
    PromptFields fields;
    fields.question = query.text;
    fields.prediction = sample_text;
    fields.gold = query.gold_answer;
    auto message = render(tpl, fields);
    JudgeOutcome out;
    for (int attempt = 0; attempt <= setup.judge_retries; ++attempt) {
        auto resp = setup.gateway->generate(setup.judge_profile, message, {}, attempt);
        out.replies.push_back(resp.text);
        if (auto v = parse_first_number(resp.text)) {
            out.score = setup.scale.clamp(*v);
            return out;
        }
    }
    return out;
}

std::optional<double> aggregate(std::span<const std::optional<double>> scores, int min_valid) {
    double sum = 0.0;
    int valid = 0;
    for (const auto& s : scores) {
        if (!s) continue;
        sum += *s;
        ++valid;
    }
    if (valid == 0 || valid < min_valid) return std::nullopt;
    return sum / valid;
}

std::optional<JudgedQuery> make_judged_query(const QueryRecord& query, std::vector<JudgeScore> scores, int min_valid) {
    std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    std::vector<std::optional<double>> values;
    values.reserve(scores.size());
    for (const auto& s : scores) values.push_back(s.score);
    auto mean = aggregate(values, min_valid);
    if (!mean) return std::nullopt;
    JudgedQuery jq;
    jq.query_id = query.id;
    jq.source = query.source;
    jq.valid_count = static_cast<int>(std::count_if(values.begin(), values.end(), [](const auto& v) { return v.has_value(); }));
    jq.invalid_count = static_cast<int>(values.size()) - jq.valid_count;
    jq.mean_score = *mean;
    jq.scores = std::move(scores);
    return jq;
}

std::vector<SourceStats> dataset_stats(std::span<const JudgedQuery> judged, const std::string& model) {
    if (judged.empty()) throw ValidationError("dataset_stats needs at least one judged query");
    std::map<std::string, std::vector<double>> by_source;
    for (const auto& q : judged) by_source[q.source].push_back(q.mean_score);
    std::vector<SourceStats> rows;
    for (const auto& [source, means] : by_source) {
        double sum = 0.0;
        for (double m : means) sum += m;
        const double n = static_cast<double>(means.size());
        const double mean = sum / n;
        double ss = 0.0;
        for (double m : means) ss += (m - mean) * (m - mean);
        rows.push_back(SourceStats{source, model, means.size(), mean, std::sqrt(ss / n)});
    }
    return rows;
}

std::string stats_csv(std::span<const SourceStats> rows) {
    std::string out = "source,model,count,mean,std\n";
    for (const auto& r : rows) out += fmt::format("{},{},{},{},{}\n", r.source, r.model, r.count, r.mean, r.stddev);
    return out;
}

namespace {

std::string pad(const std::string& s, std::size_t width) {
    std::size_t len = text::utf8_length(s);
    return len >= width ? s : s + std::string(width - len, ' ');
}

}  // namespace

std::string stats_table(std::span<const SourceStats> rows) {
    std::vector<std::array<std::string, 4>> cells;
    cells.push_back({"Source", "# Samples", "Model", "Avg. Score ± std."});
    for (const auto& r : rows) {
        cells.push_back({r.source, std::to_string(r.count), r.model, fmt::format("{:.2f} ± {:.2f}", r.mean, r.stddev)});
    }
    std::array<std::size_t, 4> width{};
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], text::utf8_length(row[c]));
    }
    std::string out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        std::string line;
        for (std::size_t c = 0; c < 4; ++c) {
            line += (c == 3) ? cells[r][c] : pad(cells[r][c], width[c]) + "  ";
        }
        out += line + "\n";
        if (r == 0) {
            std::size_t total = width[0] + width[1] + width[2] + width[3] + 6;
            out += std::string(total, '-') + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

json sample_payload(const Sample& s) { return json{{"text", s.text}, {"latency_ms", s.latency_ms}}; }

json judge_payload(const JudgeOutcome& o) {
    return json{{"score", o.score ? json(*o.score) : json(nullptr)}, {"replies", o.replies}};
}

}  // namespace

BuildDatasetResult build_dataset(std::span<const QueryRecord> input, const SamplingSetup& setup, int R,
                                 CheckpointLog* checkpoints) {
    if (R < 1) throw ValidationError(fmt::format("R must be >= 1, got {}", R));
    std::vector<const QueryRecord*> queries;
    for (const auto& q : input) queries.push_back(&q);
    std::sort(queries.begin(), queries.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

    std::mutex mutex;
    std::map<std::string, std::map<int, Sample>> samples;
    std::map<std::string, std::map<int, JudgeOutcome>> judgements;
    std::map<std::string, std::string> failures;
    std::size_t failed_units = 0;

    // Sampling.
    std::vector<std::pair<const QueryRecord*, int>> todo;
    for (const auto* q : queries) {
        for (int i = 0; i < R; ++i) {
            UnitKey unit{q->id, "sample", i};
            if (checkpoints) {
                if (auto done = checkpoints->get(unit)) {
                    samples[q->id][i] = Sample{i, done->at("text").get<std::string>(), done->at("latency_ms").get<double>()};
                    continue;
                }
            }
            todo.emplace_back(q, i);
        }
    }
    parallel_for(todo.size(), setup.parallelism, [&](std::size_t k) {
        const auto& [q, i] = todo[k];
        try {
            Sample s = draw_sample(*q, setup, i);
            if (checkpoints) checkpoints->append(UnitKey{q->id, "sample", i}, sample_payload(s));
            std::lock_guard lock(mutex);
            samples[q->id][i] = std::move(s);
        } catch (const Error& e) {
            std::lock_guard lock(mutex);
            ++failed_units;
            auto& msg = failures[q->id];
            if (msg.empty()) msg = fmt::format("sample {}: {}", i, e.what());
        }
    });

    // Judging, only for fully sampled queries with a gold answer.
    std::vector<std::pair<const QueryRecord*, int>> judge_todo;
    for (const auto* q : queries) {
        if (static_cast<int>(samples[q->id].size()) != R || q->gold_answer.empty()) continue;
        for (int i = 0; i < R; ++i) {
            UnitKey unit{q->id, "judge", i};
            if (checkpoints) {
                if (auto done = checkpoints->get(unit)) {
                    JudgeOutcome o;
                    if (!done->at("score").is_null()) o.score = done->at("score").get<double>();
                    o.replies = done->at("replies").get<std::vector<std::string>>();
                    judgements[q->id][i] = std::move(o);
                    continue;
                }
            }
            judge_todo.emplace_back(q, i);
        }
    }
    parallel_for(judge_todo.size(), setup.parallelism, [&](std::size_t k) {
        const auto& [q, i] = judge_todo[k];
        try {
            std::string sample_text;
            {
                std::lock_guard lock(mutex);
                sample_text = samples[q->id][i].text;
            }
            JudgeOutcome o = judge_sample(*q, sample_text, setup);
            if (checkpoints) checkpoints->append(UnitKey{q->id, "judge", i}, judge_payload(o));
            std::lock_guard lock(mutex);
            judgements[q->id][i] = std::move(o);
        } catch (const Error& e) {
            std::lock_guard lock(mutex);
            ++failed_units;
            auto& msg = failures[q->id];
            if (msg.empty()) msg = fmt::format("judge {}: {}", i, e.what());
        }
    });

    BuildDatasetResult result;
    result.failed_units = failed_units;
    for (const auto* q : queries) {
        SampleSet set;
        set.query_id = q->id;
        set.requested_R = R;
        for (auto& [i, s] : samples[q->id]) set.samples.push_back(s);
        if (!set.complete()) {
            set.error = failures.contains(q->id) ? failures[q->id] : "incomplete";
            result.dropped.push_back({q->id, "sampling incomplete: " + *set.error});
            result.sample_sets.push_back(std::move(set));
            continue;
        }
        result.sample_sets.push_back(std::move(set));
        if (q->gold_answer.empty()) {
            result.dropped.push_back({q->id, "missing gold answer"});
            continue;
        }
        if (static_cast<int>(judgements[q->id].size()) != R) {
            result.dropped.push_back({q->id, "judging incomplete: " + failures[q->id]});
            continue;
        }
        std::vector<JudgeScore> scores;
        for (auto& [i, o] : judgements[q->id]) scores.push_back(JudgeScore{i, o.score, o.replies.empty() ? "" : o.replies.back()});
        auto jq = make_judged_query(*q, std::move(scores), setup.min_valid);
        if (!jq) {
            result.dropped.push_back({q->id, fmt::format("fewer than {} valid judge scores", setup.min_valid)});
            continue;
        }
        result.judged.push_back(std::move(*jq));
    }
    if (!result.judged.empty()) {
        result.stats = dataset_stats(result.judged, setup.gateway->profile(setup.sampled_profile).model_name);
    }
    return result;
}

namespace {

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError(fmt::format("cannot write {}", path.string()));
    out << content;
}

template <typename T>
void write_jsonl(const fs::path& path, const std::vector<T>& rows) {
    std::string content;
    for (const auto& r : rows) content += json(r).dump() + "\n";
    write_text(path, content);
}

}  // namespace

std::vector<fs::path> write_build_outputs(const BuildDatasetResult& result, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> out{dir / "samples.jsonl", dir / "judged.jsonl", dir / "dropped.jsonl", dir / "stats.csv",
                              dir / "stats.txt"};
    write_jsonl(out[0], result.sample_sets);
    write_jsonl(out[1], result.judged);
    std::string dropped;
    for (const auto& d : result.dropped) dropped += json{{"query_id", d.query_id}, {"reason", d.reason}}.dump() + "\n";
    write_text(out[2], dropped);
    write_text(out[3], stats_csv(result.stats));
    write_text(out[4], result.stats.empty() ? std::string("no judged queries\n") : stats_table(result.stats));
    return out;
}

std::vector<JudgedQuery> load_judged(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError(fmt::format("cannot open {}", path.string()));
    std::vector<JudgedQuery> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<JudgedQuery>());
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
        }
    }
    return out;
}

}  // namespace kbgate
