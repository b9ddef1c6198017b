// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/cli.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "kbgate/boundary_dataset.hpp"
#include "kbgate/config.hpp"
#include "kbgate/error.hpp"
#include "kbgate/evaluation.hpp"
#include "kbgate/gatekeeper.hpp"
#include "kbgate/orchestrator.hpp"
#include "kbgate/parallel.hpp"
#include "kbgate/runstore.hpp"
#include "kbgate/sampling.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    std::string config;
    std::string run_dir = "runs/default";
    std::size_t parallelism = 8;
    bool resume = false;
    bool mock = false;
    long halt_after_units = -1;
};

/// Everything a command needs, built once per invocation.
struct Context {
    Globals globals;
    AppConfig cfg;
    std::unique_ptr<RunStore> store;
    std::unique_ptr<ModelGateway> gateway;
    std::unique_ptr<Retriever> retriever;

    SamplingSetup sampling(const std::string& judge_profile) const {
        SamplingSetup s;
        s.gateway = gateway.get();
        s.templates = &cfg.templates;
        s.sampled_profile = cfg.roles.sampled;
        s.judge_profile = judge_profile;
        s.scale = cfg.scale;
        s.judge_retries = cfg.judge_retries;
        s.min_valid = cfg.min_valid;
        s.parallelism = globals.parallelism;
        return s;
    }

    Gatekeeper gatekeeper() const {
        return Gatekeeper(*gateway, cfg.templates,
                          GateProfiles{cfg.roles.hard_boundary, cfg.roles.soft_boundary, cfg.roles.sampled},
                          cfg.scale);
    }

    fs::path path(const std::string& rel) const { return store->path(rel); }
};

std::unique_ptr<Context> make_context(const Globals& g) {
    auto ctx = std::make_unique<Context>();
    ctx->globals = g;
    if (g.parallelism == 0) throw ValidationError("--parallelism must be >= 1");
    ctx->cfg = g.config.empty() ? AppConfig::defaults() : AppConfig::load(g.config);
    ctx->store = std::make_unique<RunStore>(g.run_dir, RunOptions{g.resume, g.halt_after_units});

    ctx->gateway = std::make_unique<ModelGateway>(ctx->cfg.profiles);
    const AppConfig& cfg = ctx->cfg;
    if (g.mock) {
        ctx->gateway->force_mock([&cfg](const EndpointProfile& p) { return cfg.mock_options_for(p); });
    } else {
        for (const auto& p : cfg.profiles) {
            if (p.backend == "mock") ctx->gateway->set_backend(p.name, std::make_shared<MockBackend>(cfg.mock_options_for(p)));
        }
    }
    ctx->gateway->enable_cache(ctx->path("cache/responses"));
    ctx->gateway->set_call_log(std::make_shared<CallLog>(ctx->path("calls.jsonl")));

    std::shared_ptr<SearchProvider> text;
    std::shared_ptr<SearchProvider> image;
    if (g.mock) {
        text = std::make_shared<MockSearchProvider>(cfg.top_k);
        image = std::make_shared<MockSearchProvider>(cfg.top_k);
    } else {
        text = make_search_provider(cfg.text_provider, cfg.top_k, cfg.base_dir);
        image = make_search_provider(cfg.image_provider, cfg.top_k, cfg.base_dir);
    }
    ctx->retriever = std::make_unique<Retriever>(text, image, cfg.policy);
    ctx->retriever->enable_cache(ctx->path("cache/search"), cfg.search_max_age_s);
    return ctx;
}

struct StageOutput {
    std::vector<fs::path> outputs;
    bool partial = false;
    std::string summary;
};

struct StageSpec {
    std::string name;
    std::vector<std::string> config_sections;
    json extra = json::object();
    std::vector<fs::path> inputs;
    json params = json::object();
    std::vector<std::string> profiles;
};

int run_stage(Context& ctx, StageSpec spec, const std::function<StageOutput(CheckpointLog&)>& body) {
    std::vector<FileDigest> inputs;
    json input_digests = json::array();
    for (const auto& p : spec.inputs) {
        if (!fs::exists(p)) throw IngestionError(fmt::format("input {} not found", p.string()));
        inputs.push_back(digest_of(p));
        input_digests.push_back(inputs.back().sha256);
    }
    json extra = spec.extra;
    extra["inputs"] = input_digests;
    extra["mock"] = ctx.globals.mock;
    extra["params"] = spec.params;
    const std::string hash = ctx.cfg.hash(spec.config_sections, extra);

    if (ctx.store->is_complete(spec.name, hash, inputs)) {
        fmt::print("{}: already complete for this configuration, nothing to do\n", spec.name);
        return kExitOk;
    }
    CheckpointLog& log = ctx.store->open_stage(spec.name, hash);
    if (log.quarantined() > 0) {
        fmt::print(stderr, "{}: quarantined {} corrupted checkpoint line(s); their units are rescheduled\n",
                   spec.name, log.quarantined());
    }

    ManifestEntry entry;
    entry.run_id = ctx.store->run_id();
    entry.stage = spec.name;
    entry.status = "started";
    entry.config_hash = hash;
    entry.template_hashes = ctx.cfg.document.at("templates");
    entry.profiles = spec.profiles;
    entry.inputs = inputs;
    entry.params = spec.params;
    entry.params["mock"] = ctx.globals.mock;
    entry.params["resumed_units"] = log.size();
    entry.started_at = utc_timestamp();
    entry.tool_version = kToolVersion;
    ctx.store->append_manifest(entry);

    StageOutput out = body(log);

    entry.status = out.partial ? "partial" : "completed";
    entry.finished_at = utc_timestamp();
    for (const auto& p : out.outputs) entry.outputs.push_back(digest_of(p));
    ctx.store->append_manifest(entry);
    if (!out.summary.empty()) fmt::print("{}", out.summary);
    if (out.partial) {
        fmt::print(stderr, "{}: finished with failures; see the error files in {}\n", spec.name,
                   ctx.store->dir().string());
        return kExitPartial;
    }
    return kExitOk;
}

fs::path queries_path(const Context& ctx, const std::string& given) {
    return given.empty() ? ctx.path("queries.jsonl") : fs::path(given);
}

std::string eps_tag(double eps) { return fmt::format("{}", eps); }

// Rejected before any stage opens so a bad threshold is a usage error.
void check_skb_epsilon(double eps, const ScoreScale& scale) {
    if (!(eps >= scale.wrong)) throw RangeError(fmt::format("skb epsilon {} below s_w = {}", eps, scale.wrong));
}

void write_text(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError(fmt::format("cannot write {}", p.string()));
    out << content;
}

std::vector<AnswerMode> parse_modes(const std::string& spec) {
    std::vector<AnswerMode> modes;
    std::set<AnswerMode> seen;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        auto comma = spec.find(',', pos);
        if (comma == std::string::npos) comma = spec.size();
        auto m = parse_gate_variant(text::trim(std::string_view(spec).substr(pos, comma - pos)));
        if (seen.insert(m).second) modes.push_back(m);
        pos = comma + 1;
    }
    return modes;
}

/// Modes with an answers_<mode>.jsonl in the run dir.
std::vector<AnswerMode> answered_modes(const Context& ctx) {
    std::vector<AnswerMode> modes;
    for (auto m : {AnswerMode::None, AnswerMode::All, AnswerMode::Prompt, AnswerMode::Hkb, AnswerMode::Skb}) {
        if (fs::exists(ctx.path(fmt::format("answers_{}.jsonl", to_string(m))))) modes.push_back(m);
    }
    if (modes.empty()) throw IngestionError("no answers_<mode>.jsonl in the run dir; run `answer` first");
    return modes;
}

json describe_profiles(const Context& ctx, std::initializer_list<std::string> names) {
    json out = json::object();
    for (const auto& n : names) out[n] = ctx.cfg.profile(n).describe();
    return out;
}

// ---- commands ----

int cmd_build_dataset(Context& ctx, const std::string& queries_file, int R) {
    auto queries = load_queries(queries_file);
    const auto& roles = ctx.cfg.roles;
    StageSpec spec{"build-dataset",
                   {"scale", "sampling", "templates"},
                   describe_profiles(ctx, {roles.sampled, roles.judge}),
                   {queries_file},
                   json{{"R", R}},
                   {roles.sampled, roles.judge}};
    return run_stage(ctx, spec, [&](CheckpointLog& log) {
        auto setup = ctx.sampling(roles.judge);
        auto result = build_dataset(queries, setup, R, &log);
        StageOutput out;
        write_queries(ctx.path("queries.jsonl"), queries);
        out.outputs = write_build_outputs(result, ctx.store->dir());
        out.outputs.push_back(ctx.path("queries.jsonl"));
        out.partial = result.failed_units > 0;
        out.summary = fmt::format("judged {} of {} queries ({} dropped)\n", result.judged.size(), queries.size(),
                                  result.dropped.size());
        if (!result.judged.empty()) out.summary += stats_table(result.stats);
        return out;
    });
}

int cmd_label(Context& ctx, std::optional<double> epsilon, const std::string& judged, const std::string& human,
              const std::string& queries_file, const std::string& out_name) {
    const double eps = epsilon.value_or(ctx.cfg.label_epsilon);
    StageSpec spec;
    spec.config_sections = {"scale"};
    if (!human.empty()) {
        spec.name = "label:human";
        spec.inputs = {human, queries_path(ctx, queries_file)};
    } else {
        spec.name = "label@" + eps_tag(eps);
        spec.inputs = {judged.empty() ? ctx.path("judged.jsonl") : fs::path(judged)};
        spec.params = json{{"epsilon", eps}};
    }
    return run_stage(ctx, spec, [&](CheckpointLog&) {
        std::vector<BoundaryLabel> labels;
        if (!human.empty()) {
            labels = import_human_labels(human, load_queries(spec.inputs[1]));
        } else {
            labels = build_labels(load_judged(spec.inputs[0]), eps, ctx.cfg.scale);
        }
        const fs::path out = ctx.path(out_name);
        write_labels(out, labels);
        std::size_t pos = 0;
        for (const auto& l : labels) pos += l.hard ? 1 : 0;
        StageOutput o;
        o.outputs = {out};
        o.summary = fmt::format("{} labels ({} search-needed) -> {}\n", labels.size(), pos, out.string());
        return o;
    });
}

int cmd_export_sft(Context& ctx, const std::string& variant_name, const std::string& labels_file,
                   const std::string& out_file, bool balance, const std::string& dialect_opt,
                   const std::string& queries_file) {
    const SftVariant variant = parse_sft_variant(variant_name);
    const fs::path labels = labels_file.empty() ? ctx.path("labels.jsonl") : fs::path(labels_file);
    const fs::path out = out_file.empty() ? ctx.path(fmt::format("sft_{}.jsonl", to_string(variant))) : fs::path(out_file);
    const std::string& boundary =
        variant == SftVariant::Hard ? ctx.cfg.roles.hard_boundary : ctx.cfg.roles.soft_boundary;
    const std::string dialect = dialect_opt.empty() ? ctx.cfg.profile(boundary).dialect : dialect_opt;
    StageSpec spec{fmt::format("export-sft:{}", to_string(variant)),
                   {"scale", "templates"},
                   json::object(),
                   {labels, queries_path(ctx, queries_file)},
                   json{{"variant", to_string(variant)}, {"balance", balance}, {"dialect", dialect},
                        {"out", out.string()}},
                   {}};
    return run_stage(ctx, spec, [&](CheckpointLog&) {
        SftExportOptions options{variant, ctx.cfg.scale, dialect, balance};
        auto res = export_sft(load_labels(labels), load_queries(spec.inputs[1]), ctx.cfg.templates, options, out);
        StageOutput o;
        o.outputs = {res.data, res.manifest};
        o.summary = fmt::format("{} {} records -> {}\n", res.records, to_string(variant), res.data.string());
        return o;
    });
}

int cmd_gate(Context& ctx, const std::string& variant_name, std::optional<double> epsilon,
             const std::string& queries_file) {
    const GateVariant variant = parse_gate_variant(variant_name);
    const fs::path qpath = queries_path(ctx, queries_file);
    StageSpec spec;
    spec.config_sections = {"scale", "templates"};
    spec.inputs = {qpath};
    spec.name = fmt::format("gate:{}", to_string(variant));
    spec.params = json{{"variant", to_string(variant)}};
    std::optional<double> eps;
    if (variant == GateVariant::Skb) {
        eps = epsilon.value_or(ctx.cfg.skb_epsilon);
        check_skb_epsilon(*eps, ctx.cfg.scale);
        spec.name += "@" + eps_tag(*eps);
        spec.params["epsilon"] = *eps;
        spec.extra = describe_profiles(ctx, {ctx.cfg.roles.soft_boundary});
        spec.profiles = {ctx.cfg.roles.soft_boundary};
    } else if (variant == GateVariant::Hkb) {
        spec.extra = describe_profiles(ctx, {ctx.cfg.roles.hard_boundary});
        spec.profiles = {ctx.cfg.roles.hard_boundary};
    } else if (variant == GateVariant::Prompt) {
        spec.extra = describe_profiles(ctx, {ctx.cfg.roles.sampled});
        spec.profiles = {ctx.cfg.roles.sampled};
    }
    auto queries = load_queries(qpath);
    return run_stage(ctx, spec, [&](CheckpointLog& log) {
        fmt::print("gate {}{}\n", to_string(variant), eps ? fmt::format(" epsilon={}", *eps) : std::string());
        const Gatekeeper gk = ctx.gatekeeper();
        std::vector<std::optional<GateDecision>> decisions(queries.size());
        std::vector<std::optional<std::string>> errors(queries.size());
        parallel_for(queries.size(), ctx.globals.parallelism, [&](std::size_t i) {
            const UnitKey unit{queries[i].id, spec.name};
            if (auto p = log.get(unit)) {
                decisions[i] = p->get<GateDecision>();
                return;
            }
            try {
                auto d = gk.decide(queries[i], variant, eps);
                log.append(unit, json(d));
                decisions[i] = std::move(d);
            } catch (const Error& e) {
                errors[i] = e.what();
            }
        });
        std::vector<std::size_t> order(queries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return queries[a].id < queries[b].id; });
        std::string content;
        std::string error_lines;
        std::size_t retrieves = 0;
        std::size_t n = 0;
        for (auto i : order) {
            if (decisions[i]) {
                content += json(*decisions[i]).dump() + "\n";
                retrieves += decisions[i]->retrieve ? 1 : 0;
                ++n;
            } else {
                error_lines += json{{"query_id", queries[i].id}, {"error", *errors[i]}}.dump() + "\n";
            }
        }
        StageOutput o;
        const fs::path out = ctx.path(fmt::format("decisions_{}.jsonl", to_string(variant)));
        const fs::path err = ctx.path(fmt::format("decisions_{}_errors.jsonl", to_string(variant)));
        write_text(out, content);
        write_text(err, error_lines);
        o.outputs = {out, err};
        o.partial = n != queries.size();
        o.summary = fmt::format("{} decisions, search ratio {:.2f}%, {} failed -> {}\n", n,
                                n ? 100.0 * static_cast<double>(retrieves) / static_cast<double>(n) : 0.0,
                                queries.size() - n, out.string());
        return o;
    });
}

int cmd_answer(Context& ctx, const std::string& modes_spec, std::optional<double> epsilon,
               const std::string& queries_file) {
    const auto modes = parse_modes(modes_spec);
    const double eps = epsilon.value_or(ctx.cfg.skb_epsilon);
    check_skb_epsilon(eps, ctx.cfg.scale);
    const fs::path qpath = queries_path(ctx, queries_file);
    json mode_names = json::array();
    for (auto m : modes) mode_names.push_back(to_string(m));
    const auto& r = ctx.cfg.roles;
    StageSpec spec{"answer@" + eps_tag(eps),
                   {"scale", "templates", "retrieval"},
                   describe_profiles(ctx, {r.answer, r.sampled, r.hard_boundary, r.soft_boundary}),
                   {qpath},
                   json{{"modes", mode_names}, {"epsilon", eps}},
                   {r.answer, r.sampled, r.hard_boundary, r.soft_boundary}};
    auto queries = load_queries(qpath);
    return run_stage(ctx, spec, [&](CheckpointLog& log) {
        const Gatekeeper gk = ctx.gatekeeper();
        AnswerOrchestrator orch(*ctx.gateway, *ctx.retriever, gk, ctx.cfg.templates,
                                AnswerOptions{r.answer, eps, ctx.cfg.context_budget});
        auto result = run_benchmark(queries, modes, orch, ctx.globals.parallelism, &log);
        StageOutput o;
        o.outputs = write_benchmark(result, ctx.store->dir());
        o.partial = result.failures > 0;
        o.summary = timing_csv(result.timing);
        return o;
    });
}

int cmd_eval(Context& ctx, const std::string& modes_spec, const std::string& queries_file) {
    const auto modes = modes_spec.empty() ? answered_modes(ctx) : parse_modes(modes_spec);
    const fs::path qpath = queries_path(ctx, queries_file);
    StageSpec spec;
    spec.name = "eval";
    spec.config_sections = {"scale", "sampling", "templates"};
    spec.extra = describe_profiles(ctx, {ctx.cfg.roles.judge});
    spec.inputs = {qpath};
    json mode_names = json::array();
    for (auto m : modes) {
        spec.inputs.push_back(ctx.path(fmt::format("answers_{}.jsonl", to_string(m))));
        mode_names.push_back(to_string(m));
    }
    spec.params = json{{"modes", mode_names}};
    spec.profiles = {ctx.cfg.roles.judge};
    auto queries = load_queries(qpath);
    return run_stage(ctx, spec, [&](CheckpointLog& log) {
        const auto judge = ctx.sampling(ctx.cfg.roles.judge);
        std::map<AnswerMode, std::vector<ItemMetrics>> metrics;
        StageOutput o;
        for (std::size_t k = 0; k < modes.size(); ++k) {
            auto records = load_answers(spec.inputs[k + 1]);
            auto items = evaluate_records(records, queries, judge, std::string(to_string(modes[k])), &log);
            std::string content;
            for (const auto& m : items) content += json(m).dump() + "\n";
            const fs::path out = ctx.path(fmt::format("metrics_{}.jsonl", to_string(modes[k])));
            write_text(out, content);
            o.outputs.push_back(out);
            metrics[modes[k]] = std::move(items);
        }
        auto report = emit_report(metrics);
        write_text(ctx.path("report.csv"), report_csv(report));
        write_text(ctx.path("report.txt"), report_table(report));
        o.outputs.push_back(ctx.path("report.csv"));
        o.outputs.push_back(ctx.path("report.txt"));
        o.summary = report_table(report);
        return o;
    });
}

int cmd_sweep(Context& ctx, const std::string& grid_spec, const std::string& queries_file) {
    const auto grid = parse_grid(grid_spec);
    const fs::path qpath = queries_path(ctx, queries_file);
    const auto& r = ctx.cfg.roles;
    StageSpec spec{"sweep",
                   {"scale", "sampling", "templates", "retrieval"},
                   describe_profiles(ctx, {r.answer, r.soft_boundary, r.judge}),
                   {qpath},
                   json{{"grid", grid}},
                   {r.answer, r.soft_boundary, r.judge}};
    auto queries = load_queries(qpath);
    return run_stage(ctx, spec, [&](CheckpointLog& log) {
        const Gatekeeper gk = ctx.gatekeeper();
        StageOutput o;

        // Each query's boundary model runs once; every epsilon reuses it.
        std::vector<std::optional<std::optional<double>>> soft(queries.size());
        parallel_for(queries.size(), ctx.globals.parallelism, [&](std::size_t i) {
            const UnitKey unit{queries[i].id, "sweep:soft"};
            if (auto p = log.get(unit)) {
                soft[i] = p->at("score").is_null() ? std::optional<double>{} : p->at("score").get<double>();
                return;
            }
            try {
                auto pred = gk.predict_soft(queries[i]);
                log.append(unit, json{{"score", pred.score ? json(*pred.score) : json(nullptr)},
                                      {"raw", pred.output.raw}});
                soft[i] = pred.score;
            } catch (const Error&) {
                // left unscheduled; the row set shrinks and the stage is partial
            }
        });
        std::vector<QueryRecord> usable;
        std::map<std::string, std::optional<double>> scores;
        for (std::size_t i = 0; i < queries.size(); ++i) {
            if (soft[i]) {
                usable.push_back(queries[i]);
                scores[queries[i].id] = *soft[i];
            }
        }
        AnswerOrchestrator orch(*ctx.gateway, *ctx.retriever, gk, ctx.cfg.templates,
                                AnswerOptions{r.answer, ctx.cfg.skb_epsilon, ctx.cfg.context_budget});
        const AnswerMode base_modes[] = {AnswerMode::None, AnswerMode::All};
        auto bench = run_benchmark(usable, base_modes, orch, ctx.globals.parallelism, &log);
        const auto judge = ctx.sampling(r.judge);
        auto none = evaluate_records(bench.records.at(AnswerMode::None), usable, judge, "none", &log);
        auto all = evaluate_records(bench.records.at(AnswerMode::All), usable, judge, "all", &log);
        auto rows = epsilon_sweep(grid, scores, none, all);
        write_text(ctx.path("sweep.csv"), sweep_csv(rows));
        o.outputs = {ctx.path("sweep.csv")};
        o.partial = usable.size() != queries.size() || bench.failures > 0;
        o.summary = sweep_csv(rows);
        return o;
    });
}

int cmd_consistency(Context& ctx, std::string judge_a, const std::string& judge_b, const std::string& modes_spec,
                    const std::string& queries_file) {
    if (judge_a.empty()) judge_a = ctx.cfg.roles.judge;
    const auto modes = modes_spec.empty() ? answered_modes(ctx) : parse_modes(modes_spec);
    const fs::path qpath = queries_path(ctx, queries_file);
    StageSpec spec;
    spec.name = fmt::format("consistency:{}:{}", judge_a, judge_b);
    spec.config_sections = {"scale", "sampling", "templates"};
    spec.extra = describe_profiles(ctx, {judge_a, judge_b});
    spec.inputs = {qpath};
    for (auto m : modes) spec.inputs.push_back(ctx.path(fmt::format("answers_{}.jsonl", to_string(m))));
    spec.profiles = {judge_a, judge_b};
    if (ctx.globals.mock) {
        // A second judge profile has no role of its own; default it to a judge mock.
        for (const auto& name : {judge_a, judge_b}) {
            json options = ctx.cfg.profile(name).mock.is_object() ? ctx.cfg.profile(name).mock : json::object();
            if (!options.contains("kind")) options["kind"] = "judge";
            ctx.gateway->set_backend(name, std::make_shared<MockBackend>(options));
        }
    }
    auto queries = load_queries(qpath);
    return run_stage(ctx, spec, [&](CheckpointLog&) {
        std::map<std::string, std::vector<AnswerRecord>> answers;
        for (std::size_t k = 0; k < modes.size(); ++k) {
            answers[std::string(to_string(modes[k]))] = load_answers(spec.inputs[k + 1]);
        }
        auto res = judge_consistency(answers, queries, ctx.sampling(judge_a), ctx.sampling(judge_b));
        write_text(ctx.path("consistency.csv"), consistency_csv(res));
        StageOutput o;
        o.outputs = {ctx.path("consistency.csv")};
        o.summary = consistency_csv(res);
        return o;
    });
}

int cmd_held_in(Context& ctx, const std::string& labels_file, const std::string& variant_name,
                std::optional<double> tolerance, const std::string& queries_file) {
    const SftVariant variant = parse_sft_variant(variant_name);
    const double tol = tolerance.value_or(ctx.cfg.held_in_tolerance);
    const fs::path labels_path = labels_file.empty() ? ctx.path("labels.jsonl") : fs::path(labels_file);
    const fs::path qpath = queries_path(ctx, queries_file);
    const std::string& boundary =
        variant == SftVariant::Hard ? ctx.cfg.roles.hard_boundary : ctx.cfg.roles.soft_boundary;
    StageSpec spec{fmt::format("held-in:{}", to_string(variant)),
                   {"scale", "templates"},
                   describe_profiles(ctx, {boundary}),
                   {labels_path, qpath},
                   json{{"variant", to_string(variant)}, {"tolerance", tol}},
                   {boundary}};
    auto labels = load_labels(labels_path);
    auto all_queries = load_queries(qpath);
    return run_stage(ctx, spec, [&](CheckpointLog& log) {
        std::map<std::string_view, const QueryRecord*> by_id;
        for (const auto& q : all_queries) by_id[q.id] = &q;
        const Gatekeeper gk = ctx.gatekeeper();
        std::vector<HeldInPrediction> preds(labels.size());
        std::vector<std::optional<std::string>> errors(labels.size());
        parallel_for(labels.size(), ctx.globals.parallelism, [&](std::size_t i) {
            auto it = by_id.find(labels[i].query_id);
            if (it == by_id.end()) {
                errors[i] = "label for unknown query";
                return;
            }
            const UnitKey unit{labels[i].query_id, spec.name};
            if (auto p = log.get(unit)) {
                const json& j = *p;
                preds[i].query_id = labels[i].query_id;
                if (!j.at("hard").is_null()) preds[i].hard = j.at("hard").get<bool>();
                if (!j.at("soft").is_null()) preds[i].soft = j.at("soft").get<double>();
                return;
            }
            try {
                HeldInPrediction p{labels[i].query_id, {}, {}};
                std::string raw;
                if (variant == SftVariant::Hard) {
                    auto h = gk.predict_hard(*it->second);
                    p.hard = h.verdict;
                    raw = h.output.raw;
                } else {
                    auto s = gk.predict_soft(*it->second);
                    p.soft = s.score;
                    raw = s.output.raw;
                }
                log.append(unit, json{{"hard", p.hard ? json(*p.hard) : json(nullptr)},
                                      {"soft", p.soft ? json(*p.soft) : json(nullptr)},
                                      {"raw", raw}});
                preds[i] = std::move(p);
            } catch (const Error& e) {
                errors[i] = e.what();
            }
        });
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (errors[i]) throw IntegrityError(fmt::format("held-in {}: {}", labels[i].query_id, *errors[i]));
        }
        double acc = held_in_accuracy(preds, labels, variant, tol);
        const fs::path out = ctx.path(fmt::format("held_in_{}.json", to_string(variant)));
        write_text(out, json{{"variant", to_string(variant)}, {"n", labels.size()}, {"tolerance", tol},
                             {"accuracy", acc}}.dump(2) + "\n");
        StageOutput o;
        o.outputs = {out};
        o.summary = fmt::format("held-in {} accuracy: {:.2f} over {} labels\n", to_string(variant), acc, labels.size());
        return o;
    });
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"kbgate: knowledge-boundary gating for multimodal RAG"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--run-dir", g.run_dir, "Run directory for artifacts, checkpoints and caches");
    app.add_option("--parallelism", g.parallelism, "Concurrent workers")->check(CLI::PositiveNumber);
    app.add_flag("--resume", g.resume, "Continue a partial run");
    app.add_flag("--mock", g.mock, "Use mock model backends and search providers");
    app.add_option("--halt-after-units", g.halt_after_units)->group("");

    std::string queries;
    std::string judged;
    std::string labels;
    std::string out;
    std::string variant;
    std::string modes;
    std::string grid = "1.0:5.0:0.1";
    std::string human;
    std::string dialect;
    std::string judge_a;
    std::string judge_b;
    std::string model;
    std::optional<double> epsilon;
    std::optional<double> tolerance;
    int R = -1;
    bool balance = false;

    auto* build = app.add_subcommand("build-dataset", "Sample answers, judge them and compute per-source stats");
    build->add_option("--queries", queries, "Query JSONL")->required()->check(CLI::ExistingFile);
    build->add_option("-R,--samples", R, "Samples per query")->check(CLI::PositiveNumber);

    auto* label = app.add_subcommand("label", "Derive hard/soft boundary labels from judged queries");
    label->add_option("--epsilon", epsilon, "Hard-label threshold");
    label->add_option("--judged", judged, "JudgedQuery JSONL (default: <run-dir>/judged.jsonl)");
    label->add_option("--human", human, "Import human search-needed labels (JSONL or CSV) instead");
    label->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");
    label->add_option("--out", out, "Output file name inside the run dir")->default_str("labels.jsonl");

    auto* sft = app.add_subcommand("export-sft", "Write SFT training records for an external trainer");
    sft->add_option("--variant", variant, "hard|soft")->required();
    sft->add_option("--labels", labels, "Labels JSONL (default: <run-dir>/labels.jsonl)");
    sft->add_option("--out", out, "Output JSONL (default: <run-dir>/sft_<variant>.jsonl)");
    sft->add_flag("--balance", balance, "Downsample the majority hard class");
    sft->add_option("--dialect", dialect, "Prompt dialect (default: the boundary profile's)");
    sft->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");

    auto* gate = app.add_subcommand("gate", "Decide per query whether to retrieve");
    gate->add_option("--variant", variant, "none|all|prompt|hkb|skb")->required();
    gate->add_option("--epsilon", epsilon, "SKB threshold (default from config, 4.5)");
    gate->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");

    auto* answer = app.add_subcommand("answer", "Answer queries under one or more run modes");
    answer->add_option("--modes", modes, "Comma list of none,all,prompt,hkb,skb")->default_str("none,all,prompt,hkb,skb");
    answer->add_option("--epsilon", epsilon, "SKB threshold (default from config, 4.5)");
    answer->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");

    auto* eval = app.add_subcommand("eval", "Score answers and emit the report tables");
    eval->add_option("--modes", modes, "Modes to evaluate (default: every answers file)");
    eval->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");

    auto* sweep = app.add_subcommand("sweep", "Search ratio and metrics over an SKB threshold grid");
    sweep->add_option("--grid", grid, "start:stop:step (inclusive) or a comma list")->capture_default_str();
    sweep->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");

    auto* stats = app.add_subcommand("stats", "Print per-source score statistics");
    stats->add_option("--judged", judged, "JudgedQuery JSONL (default: <run-dir>/judged.jsonl)");
    stats->add_option("--model", model, "Model column label");

    auto* cons = app.add_subcommand("consistency", "Compare average scores of the same answers under two judges");
    cons->add_option("--judge-a", judge_a, "First judge profile (default: the judge role)");
    cons->add_option("--judge-b", judge_b, "Second judge profile")->required();
    cons->add_option("--modes", modes, "Modes to compare (default: every answers file)");
    cons->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");

    auto* held = app.add_subcommand("held-in", "Boundary-model accuracy on its own training labels");
    held->add_option("--labels", labels, "Labels JSONL (default: <run-dir>/labels.jsonl)");
    held->add_option("--variant", variant, "hard|soft")->required();
    held->add_option("--tolerance", tolerance, "Soft match tolerance (default 0.5)");
    held->add_option("--queries", queries, "Query JSONL (default: <run-dir>/queries.jsonl)");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (stats->parsed()) {
            Context ctx;
            ctx.globals = g;
            ctx.cfg = g.config.empty() ? AppConfig::defaults() : AppConfig::load(g.config);
            const fs::path path = judged.empty() ? fs::path(g.run_dir) / "judged.jsonl" : fs::path(judged);
            auto rows = dataset_stats(load_judged(path),
                                      model.empty() ? ctx.cfg.profile(ctx.cfg.roles.sampled).model_name : model);
            fmt::print("{}", stats_table(rows));
            return kExitOk;
        }
        auto ctx = make_context(g);
        if (build->parsed()) return cmd_build_dataset(*ctx, queries, R > 0 ? R : ctx->cfg.samples_per_query);
        if (label->parsed()) return cmd_label(*ctx, epsilon, judged, human, queries, out.empty() ? "labels.jsonl" : out);
        if (sft->parsed()) return cmd_export_sft(*ctx, variant, labels, out, balance, dialect, queries);
        if (gate->parsed()) return cmd_gate(*ctx, variant, epsilon, queries);
        if (answer->parsed()) return cmd_answer(*ctx, modes.empty() ? "none,all,prompt,hkb,skb" : modes, epsilon, queries);
        if (eval->parsed()) return cmd_eval(*ctx, modes, queries);
        if (sweep->parsed()) return cmd_sweep(*ctx, grid, queries);
        if (cons->parsed()) return cmd_consistency(*ctx, judge_a, judge_b, modes, queries);
        if (held->parsed()) return cmd_held_in(*ctx, labels, variant, tolerance, queries);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "kbgate: config error: {}\n", e.what());
        return kExitUsage;
    } catch (const ValidationError& e) {
        fmt::print(stderr, "kbgate: invalid input: {}\n", e.what());
        return kExitUsage;
    } catch (const RangeError& e) {
        fmt::print(stderr, "kbgate: invalid input: {}\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        fmt::print(stderr, "kbgate: error: {}\n", e.what());
        return kExitFatal;
    }
    return kExitUsage;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run_cli(args);
}

}  // namespace kbgate
