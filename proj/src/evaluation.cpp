// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <mutex>

#include <fmt/format.h>

#include "kbgate/error.hpp"
#include "kbgate/parallel.hpp"
#include "kbgate/runstore.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

using nlohmann::json;

double rescale_to_percent(double judge_score, const ScoreScale& scale) {
    return (judge_score - scale.wrong) / scale.width() * 100.0;
}

std::optional<double> llm_metric(const std::string& prediction, const QueryRecord& query, const SamplingSetup& judge) {
    auto outcome = judge_sample(query, prediction, judge);
    if (!outcome.score) return std::nullopt;
    return rescale_to_percent(*outcome.score, judge.scale);
}

double token_accuracy(std::string_view prediction, std::string_view gold) {
    auto pred = text::tokens(prediction);
    if (pred.empty()) return 0.0;
    auto ref = text::tokens(gold);
    std::sort(pred.begin(), pred.end());
    std::sort(ref.begin(), ref.end());
    std::vector<std::string> common;
    std::set_intersection(pred.begin(), pred.end(), ref.begin(), ref.end(), std::back_inserter(common));
    return 100.0 * static_cast<double>(common.size()) / static_cast<double>(pred.size());
}

double search_ratio(std::span<const GateDecision> decisions) {
    if (decisions.empty()) throw ValidationError("search ratio of an empty decision set");
    std::size_t n = 0;
    for (const auto& d : decisions) n += d.retrieve ? 1 : 0;
    return 100.0 * static_cast<double>(n) / static_cast<double>(decisions.size());
}

double search_ratio(std::span<const bool> retrieves) {
    if (retrieves.empty()) throw ValidationError("search ratio of an empty decision set");
    auto n = std::count(retrieves.begin(), retrieves.end(), true);
    return 100.0 * static_cast<double>(n) / static_cast<double>(retrieves.size());
}

void to_json(json& j, const ItemMetrics& m) {
    j = json{{"query_id", m.query_id},
             {"source", m.source},
             {"llm", m.llm ? json(*m.llm) : json(nullptr)},
             {"token_acc", m.token_acc},
             {"retrieved", m.retrieved},
             {"failed", m.failed}};
}

void from_json(const json& j, ItemMetrics& m) {
    m = ItemMetrics{};
    m.query_id = j.at("query_id").get<std::string>();
    m.source = j.value("source", "");
    if (j.contains("llm") && !j.at("llm").is_null()) m.llm = j.at("llm").get<double>();
    m.token_acc = j.value("token_acc", 0.0);
    m.retrieved = j.value("retrieved", false);
    m.failed = j.value("failed", false);
}

std::vector<ItemMetrics> evaluate_records(std::span<const AnswerRecord> records, std::span<const QueryRecord> queries,
                                          const SamplingSetup& judge, const std::string& tag,
                                          CheckpointLog* checkpoints) {
    std::map<std::string_view, const QueryRecord*> by_id;
    for (const auto& q : queries) by_id[q.id] = &q;
    std::vector<const AnswerRecord*> sorted;
    for (const auto& r : records) {
        if (!by_id.contains(r.query_id)) throw IntegrityError(fmt::format("answer for unknown query {}", r.query_id));
        sorted.push_back(&r);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->query_id < b->query_id; });

    const std::string stage = "eval:" + tag;
    std::vector<ItemMetrics> out(sorted.size());
    parallel_for(sorted.size(), judge.parallelism, [&](std::size_t i) {
        const AnswerRecord& r = *sorted[i];
        const QueryRecord& q = *by_id.at(r.query_id);
        UnitKey unit{r.query_id, stage};
        if (checkpoints) {
            if (auto p = checkpoints->get(unit)) {
                out[i] = p->get<ItemMetrics>();
                return;
            }
        }
        ItemMetrics m;
        m.query_id = r.query_id;
        m.source = q.source;
        m.retrieved = r.retrieved;
        m.failed = r.failed();
        bool complete = true;
        if (!m.failed) {
            m.token_acc = token_accuracy(r.answer_text, q.gold_answer);
            try {
                m.llm = llm_metric(r.answer_text, q, judge);
            } catch (const Error&) {
                complete = false;  // unevaluated; left for a resumed run
            }
        }
        if (checkpoints && complete) checkpoints->append(unit, json(m));
        out[i] = std::move(m);
    });
    return out;
}

MetricAggregate aggregate_metrics(std::span<const ItemMetrics> items) {
    MetricAggregate a;
    std::size_t retrieves = 0;
    for (const auto& m : items) {
        if (m.failed) {
            ++a.failures;
            continue;
        }
        ++a.n;
        a.token_total += m.token_acc;
        if (m.llm) {
            ++a.llm_evaluated;
            a.llm_total += *m.llm;
        }
        if (m.retrieved) ++retrieves;
    }
    if (a.n) {
        a.token_acc = a.token_total / static_cast<double>(a.n);
        a.search_ratio = 100.0 * static_cast<double>(retrieves) / static_cast<double>(a.n);
    }
    if (a.llm_evaluated) a.llm = a.llm_total / static_cast<double>(a.llm_evaluated);
    return a;
}

std::vector<SweepRow> epsilon_sweep(std::span<const double> grid,
                                    const std::map<std::string, std::optional<double>>& soft_scores,
                                    std::span<const ItemMetrics> none, std::span<const ItemMetrics> all) {
    if (none.size() != all.size()) throw IntegrityError("none and all metrics differ in size");
    for (std::size_t i = 0; i < none.size(); ++i) {
        if (none[i].query_id != all[i].query_id) {
            throw IntegrityError(fmt::format("none/all misaligned at {}: {} vs {}", i, none[i].query_id,
                                             all[i].query_id));
        }
        if (!soft_scores.contains(none[i].query_id)) {
            throw IntegrityError(fmt::format("no soft score for {}", none[i].query_id));
        }
    }
    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    std::vector<ItemMetrics> mixed(none.size());
    for (double eps : grid) {
        for (std::size_t i = 0; i < none.size(); ++i) {
            const auto& s = soft_scores.at(none[i].query_id);
            bool retrieve = !s || soft_indicator(*s, eps);
            mixed[i] = retrieve ? all[i] : none[i];
        }
        auto agg = aggregate_metrics(mixed);
        rows.push_back(SweepRow{eps, agg.search_ratio, agg.llm, agg.token_acc});
    }
    return rows;
}

namespace {

double parse_double(std::string_view s) {
    s = text::trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw ValidationError(fmt::format("bad grid value '{}'", s));
    }
    return v;
}

}  // namespace

std::vector<double> parse_grid(std::string_view spec) {
    std::vector<double> out;
    if (text::trim(spec).empty()) throw ValidationError("empty epsilon grid");
    if (spec.find(':') != std::string_view::npos) {
        auto a = spec.find(':');
        auto b = spec.find(':', a + 1);
        if (b == std::string_view::npos || spec.find(':', b + 1) != std::string_view::npos) {
            throw ValidationError(fmt::format("grid '{}' is not start:stop:step", spec));
        }
        double start = parse_double(spec.substr(0, a));
        double stop = parse_double(spec.substr(a + 1, b - a - 1));
        double step = parse_double(spec.substr(b + 1));
        if (step <= 0.0 || stop < start) throw ValidationError(fmt::format("grid '{}' is empty or unbounded", spec));
        auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
        if (n > 100000) throw ValidationError(fmt::format("grid '{}' has too many points", spec));
        for (std::size_t i = 0; i < n; ++i) {
            double v = start + static_cast<double>(i) * step;
            out.push_back(std::round(v * 1e9) / 1e9);
        }
    } else {
        std::size_t pos = 0;
        while (pos <= spec.size()) {
            auto comma = spec.find(',', pos);
            if (comma == std::string_view::npos) comma = spec.size();
            out.push_back(parse_double(spec.substr(pos, comma - pos)));
            pos = comma + 1;
        }
    }
    return out;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "epsilon,ratio,llm,token_acc\n";
    for (const auto& r : rows) out += fmt::format("{},{},{},{}\n", r.epsilon, r.ratio, r.llm, r.token_acc);
    return out;
}

double held_in_accuracy(std::span<const HeldInPrediction> predictions, std::span<const BoundaryLabel> labels,
                        SftVariant variant, double tolerance) {
    if (predictions.empty()) throw ValidationError("no held-in predictions");
    if (predictions.size() != labels.size()) {
        throw IntegrityError(fmt::format("{} predictions vs {} labels", predictions.size(), labels.size()));
    }
    std::map<std::string_view, const BoundaryLabel*> by_id;
    for (const auto& l : labels) {
        if (!by_id.emplace(l.query_id, &l).second) throw IntegrityError(fmt::format("duplicate label {}", l.query_id));
    }
    std::size_t correct = 0;
    std::set<std::string_view> seen;
    for (const auto& p : predictions) {
        auto it = by_id.find(p.query_id);
        if (it == by_id.end()) throw IntegrityError(fmt::format("prediction for unlabelled query {}", p.query_id));
        if (!seen.insert(p.query_id).second) throw IntegrityError(fmt::format("duplicate prediction {}", p.query_id));
        const BoundaryLabel& l = *it->second;
        if (variant == SftVariant::Hard) {
            if (p.hard && *p.hard == l.hard) ++correct;
        } else {
            if (!l.soft) throw IntegrityError(fmt::format("label {} has no soft score", l.query_id));
            if (p.soft && std::abs(*p.soft - *l.soft) <= tolerance) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
}

ConsistencyResult judge_consistency(const std::map<std::string, std::vector<AnswerRecord>>& answers,
                                    std::span<const QueryRecord> queries, const SamplingSetup& judge_a,
                                    const SamplingSetup& judge_b) {
    ConsistencyResult result;
    for (const auto& [setting, records] : answers) {
        auto a = aggregate_metrics(evaluate_records(records, queries, judge_a, "consistency-a:" + setting));
        auto b = aggregate_metrics(evaluate_records(records, queries, judge_b, "consistency-b:" + setting));
        ConsistencyRow row{setting, a.llm, b.llm, std::abs(a.llm - b.llm)};
        result.max_gap = std::max(result.max_gap, row.gap);
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::string consistency_csv(const ConsistencyResult& result) {
    std::string out = "setting,judge_a,judge_b,gap\n";
    for (const auto& r : result.rows) out += fmt::format("{},{},{},{}\n", r.setting, r.judge_a, r.judge_b, r.gap);
    out += fmt::format("max_gap,,,{}\n", result.max_gap);
    return out;
}

const ReportCell* EvalReport::find(std::string_view dataset, AnswerMode mode) const {
    for (const auto& c : cells) {
        if (c.dataset == dataset && c.mode == mode) return &c;
    }
    return nullptr;
}

EvalReport emit_report(const std::map<AnswerMode, std::vector<ItemMetrics>>& metrics) {
    EvalReport report;
    std::set<std::string> sources;
    for (const auto& [mode, items] : metrics) {
        report.modes.push_back(mode);
        for (const auto& m : items) sources.insert(m.source);
    }
    report.datasets.assign(sources.begin(), sources.end());
    report.datasets.push_back("all");
    for (const auto& ds : report.datasets) {
        for (const auto& [mode, items] : metrics) {
            std::vector<ItemMetrics> subset;
            for (const auto& m : items) {
                if (ds == "all" || m.source == ds) subset.push_back(m);
            }
            report.cells.push_back(ReportCell{ds, mode, aggregate_metrics(subset)});
        }
    }
    return report;
}

std::string report_csv(const EvalReport& report) {
    std::string out = "dataset,mode,n,failures,llm,token_acc,search_ratio\n";
    for (const auto& c : report.cells) {
        out += fmt::format("{},{},{},{},{},{},{}\n", c.dataset, to_string(c.mode), c.metrics.n, c.metrics.failures,
                           c.metrics.llm, c.metrics.token_acc, c.metrics.search_ratio);
    }
    return out;
}

namespace {

std::string_view column_title(AnswerMode m) {
    switch (m) {
        case AnswerMode::None: return "No RAG";
        case AnswerMode::All: return "All RAG";
        case AnswerMode::Prompt: return "Prompt-based";
        case AnswerMode::Hkb: return "HKB";
        case AnswerMode::Skb: return "SKB";
    }
    return "?";
}

}  // namespace

std::string report_table(const EvalReport& report) {
    std::string out;
    for (const auto& ds : report.datasets) {
        std::vector<std::vector<std::string>> rows;
        std::vector<std::string> header{"Dataset", "Metric"};
        for (auto m : report.modes) {
            header.emplace_back(column_title(m));
            header.emplace_back("%");
        }
        rows.push_back(header);
        for (const bool llm : {true, false}) {
            std::vector<std::string> row{ds, llm ? "LLM" : "Acc."};
            for (auto m : report.modes) {
                const ReportCell* c = report.find(ds, m);
                row.push_back(fmt::format("{:.2f}", llm ? c->metrics.llm : c->metrics.token_acc));
                row.push_back(fmt::format("{:.2f}", c->metrics.search_ratio));
            }
            rows.push_back(std::move(row));
        }
        std::vector<std::size_t> width(header.size(), 0);
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], text::utf8_length(r[i]));
        }
        for (std::size_t k = 0; k < rows.size(); ++k) {
            std::string line;
            for (std::size_t i = 0; i < rows[k].size(); ++i) {
                if (i) line += " | ";
                line += rows[k][i];
                line.append(width[i] - text::utf8_length(rows[k][i]), ' ');
            }
            while (!line.empty() && line.back() == ' ') line.pop_back();
            out += line + "\n";
            if (k == 0) {
                std::string rule;
                for (std::size_t i = 0; i < width.size(); ++i) {
                    if (i) rule += "-+-";
                    rule.append(width[i], '-');
                }
                out += rule + "\n";
            }
        }
        out += "\n";
    }
    return out;
}

}  // namespace kbgate
