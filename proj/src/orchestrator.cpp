// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"
#include "kbgate/parallel.hpp"
#include "kbgate/runstore.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const AnswerRecord& r) {
    j = json{{"query_id", r.query_id},
             {"mode", to_string(r.mode)},
             {"answer_text", r.answer_text},
             {"retrieved", r.retrieved},
             {"gate_ms", r.gate_ms},
             {"retrieval_ms", r.retrieval_ms},
             {"prebuild_ms", r.prebuild_ms},
             {"answer_ms", r.answer_ms},
             {"context_hash", r.context_hash ? json(*r.context_hash) : json(nullptr)}};
    if (r.error) j["error"] = *r.error;
}

void from_json(const json& j, AnswerRecord& r) {
    r = AnswerRecord{};
    r.query_id = j.at("query_id").get<std::string>();
    r.mode = parse_gate_variant(j.at("mode").get<std::string>());
    r.answer_text = j.value("answer_text", "");
    r.retrieved = j.value("retrieved", false);
    r.gate_ms = j.value("gate_ms", 0.0);
    r.retrieval_ms = j.value("retrieval_ms", 0.0);
    r.prebuild_ms = j.value("prebuild_ms", 0.0);
    r.answer_ms = j.value("answer_ms", 0.0);
    if (j.contains("context_hash") && !j.at("context_hash").is_null()) {
        r.context_hash = j.at("context_hash").get<std::string>();
    }
    if (j.contains("error") && !j.at("error").is_null()) r.error = j.at("error").get<std::string>();
}

AnswerOrchestrator::AnswerOrchestrator(ModelGateway& gateway, Retriever& retriever, const Gatekeeper& gatekeeper,
                                       const TemplateSet& templates, AnswerOptions options)
    : gateway_(gateway), retriever_(retriever), gatekeeper_(gatekeeper), templates_(templates),
      options_(std::move(options)) {
    if (options_.answer_profile.empty()) throw ConfigError("no answering profile configured");
    if (options_.context_budget == 0) throw ConfigError("context budget must be positive");
}

AnswerOutcome AnswerOrchestrator::answer(const QueryRecord& query, AnswerMode mode) {
    AnswerOutcome out;
    AnswerRecord& r = out.record;
    r.query_id = query.id;
    r.mode = mode;
    std::string stage = "gate";
    try {
        GateDecision d = gatekeeper_.decide(query, mode, options_.epsilon);
        r.gate_ms = d.duration_ms;
        bool retrieve = d.retrieve;
        if (mode != AnswerMode::None && mode != AnswerMode::All) out.decision = d;

        const auto& profile = gateway_.profile(options_.answer_profile);
        std::optional<std::string> context;
        if (retrieve) {
            stage = "retrieval";
            RetrievedContext ctx = retriever_.retrieve(query);
            r.retrieval_ms = ctx.duration_ms;
            context = assemble_context(ctx, options_.context_budget);
            r.context_hash = sha256_hex(*context);
            r.retrieved = true;
        }
        r.prebuild_ms = r.gate_ms + r.retrieval_ms;

        stage = "answer";
        RenderedMessage message;
        if (context) {
            PromptFields fields;
            fields.question = query.text;
            fields.images = query.images;
            fields.context = *context;
            message = render(templates_.get(TemplateVariant::AnswerWithContext, profile.dialect), fields);
        } else {
            message = render_prompt(templates_.get(TemplateVariant::Answer, profile.dialect), query);
        }
        auto resp = gateway_.generate(options_.answer_profile, message, DecodingParams::greedy(), 0);
        r.answer_ms = resp.latency_ms;
        if (!resp.ok()) {
            r.error = fmt::format("answer: finish_reason={}", resp.finish_reason);
        } else {
            r.answer_text = resp.text;
        }
    } catch (const Error& e) {
        r.error = fmt::format("{}: {}", stage, e.what());
    }
    return out;
}

TimingSummary summarize_timing(AnswerMode mode, std::span<const AnswerRecord> records) {
    TimingSummary t;
    t.mode = mode;
    for (const auto& r : records) {
        ++t.rows;
        if (r.failed()) ++t.failed;
        if (r.retrieved) ++t.retrieved;
        t.total_gate_ms += r.gate_ms;
        t.total_retrieval_ms += r.retrieval_ms;
        t.total_prebuild_ms += r.prebuild_ms;
        t.total_answer_ms += r.answer_ms;
    }
    t.mean_prebuild_ms = t.rows ? t.total_prebuild_ms / static_cast<double>(t.rows) : 0.0;
    return t;
}

std::string timing_csv(std::span<const TimingSummary> rows) {
    std::string out =
        "mode,rows,failed,retrieved,total_gate_ms,total_retrieval_ms,total_prebuild_ms,mean_prebuild_ms,"
        "total_answer_ms\n";
    for (const auto& t : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", to_string(t.mode), t.rows, t.failed, t.retrieved,
                           t.total_gate_ms, t.total_retrieval_ms, t.total_prebuild_ms, t.mean_prebuild_ms,
                           t.total_answer_ms);
    }
    return out;
}

BenchmarkResult run_benchmark(std::span<const QueryRecord> queries, std::span<const AnswerMode> modes,
                              AnswerOrchestrator& orchestrator, std::size_t parallelism, CheckpointLog* checkpoints) {
    std::vector<const QueryRecord*> sorted;
    for (const auto& q : queries) {
        q.validate();
        sorted.push_back(&q);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i]->id == sorted[i - 1]->id) throw IntegrityError(fmt::format("duplicate query id {}", sorted[i]->id));
    }

    const std::size_t nq = sorted.size();
    std::vector<AnswerOutcome> outcomes(nq * modes.size());
    std::vector<std::size_t> todo;
    for (std::size_t m = 0; m < modes.size(); ++m) {
        const std::string stage = fmt::format("answer:{}", to_string(modes[m]));
        for (std::size_t i = 0; i < nq; ++i) {
            std::size_t slot = m * nq + i;
            if (checkpoints) {
                if (auto p = checkpoints->get(UnitKey{sorted[i]->id, stage})) {
                    outcomes[slot].record = p->at("record").get<AnswerRecord>();
                    if (p->contains("decision") && !p->at("decision").is_null()) {
                        outcomes[slot].decision = p->at("decision").get<GateDecision>();
                    }
                    continue;
                }
            }
            todo.push_back(slot);
        }
    }

    parallel_for(todo.size(), parallelism, [&](std::size_t k) {
        std::size_t slot = todo[k];
        std::size_t m = slot / nq;
        const QueryRecord& q = *sorted[slot % nq];
        AnswerOutcome o = orchestrator.answer(q, modes[m]);
        // Failed rows are not checkpointed so a resumed run retries them.
        if (checkpoints && !o.record.failed()) {
            json payload{{"record", o.record}, {"decision", o.decision ? json(*o.decision) : json(nullptr)}};
            checkpoints->append(UnitKey{q.id, fmt::format("answer:{}", to_string(modes[m]))}, payload);
        }
        outcomes[slot] = std::move(o);
    });

    BenchmarkResult result;
    for (std::size_t m = 0; m < modes.size(); ++m) {
        auto& recs = result.records[modes[m]];
        for (std::size_t i = 0; i < nq; ++i) {
            auto& o = outcomes[m * nq + i];
            if (o.record.failed()) ++result.failures;
            if (o.decision) result.decisions[modes[m]].push_back(*o.decision);
            recs.push_back(std::move(o.record));
        }
        result.timing.push_back(summarize_timing(modes[m], recs));
    }
    return result;
}

std::vector<fs::path> write_benchmark(const BenchmarkResult& result, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> written;
    auto write = [&](const fs::path& p, const std::string& content) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestionError(fmt::format("cannot write {}", p.string()));
        out << content;
        written.push_back(p);
    };
    std::string errors;
    for (const auto& [mode, recs] : result.records) {
        std::string content;
        for (const auto& r : recs) {
            content += json(r).dump() + "\n";
            if (r.failed()) errors += json(r).dump() + "\n";
        }
        write(dir / fmt::format("answers_{}.jsonl", to_string(mode)), content);
    }
    for (const auto& [mode, decs] : result.decisions) {
        std::string content;
        for (const auto& d : decs) content += json(d).dump() + "\n";
        write(dir / fmt::format("gate_{}.jsonl", to_string(mode)), content);
    }
    write(dir / "errors.jsonl", errors);
    write(dir / "timing.csv", timing_csv(result.timing));
    return written;
}

std::vector<AnswerRecord> load_answers(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError(fmt::format("cannot open {}", path.string()));
    std::vector<AnswerRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<AnswerRecord>());
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return out;
}

}  // namespace kbgate
