// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/boundary_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"
#include "kbgate/text.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const BoundaryLabel& l) {
    j = json{{"query_id", l.query_id},
             {"mean_score", l.mean_score ? json(*l.mean_score) : json(nullptr)},
             {"hard", l.hard},
             {"soft", l.soft ? json(*l.soft) : json(nullptr)},
             {"epsilon", l.epsilon ? json(*l.epsilon) : json(nullptr)}};
}

void from_json(const json& j, BoundaryLabel& l) {
    l = BoundaryLabel{};
    l.query_id = j.at("query_id").get<std::string>();
    l.hard = j.at("hard").get<bool>();
    auto opt = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<double>();
    };
    l.mean_score = opt("mean_score");
    l.soft = opt("soft");
    l.epsilon = opt("epsilon");
}

std::vector<BoundaryLabel> build_labels(std::span<const JudgedQuery> judged, double epsilon, const ScoreScale& scale) {
    scale.validate();
    if (!scale.contains(epsilon)) {
        throw RangeError(fmt::format("label epsilon {} outside [{}, {}]", epsilon, scale.wrong, scale.correct));
    }
    std::vector<BoundaryLabel> out;
    out.reserve(judged.size());
    for (const auto& q : judged) {
        BoundaryLabel l;
        l.query_id = q.query_id;
        l.mean_score = q.mean_score;
        l.hard = hard_label(q.mean_score, epsilon, scale);
        l.soft = flip_score(q.mean_score, scale);
        l.epsilon = epsilon;
        out.push_back(l);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.query_id < b.query_id; });
    return out;
}

std::string_view to_string(SftVariant v) { return v == SftVariant::Hard ? "hard" : "soft"; }

SftVariant parse_sft_variant(std::string_view s) {
    if (s == "hard" || s == "hkb") return SftVariant::Hard;
    if (s == "soft" || s == "skb") return SftVariant::Soft;
    throw ValidationError(fmt::format("unknown SFT variant '{}'", s));
}

std::string format_soft_target(double soft) {
    double tenths = std::round(soft * 10.0);
    return fmt::format("{:.1f}", tenths / 10.0);
}

json trainer_hyperparameters() {
    return json{{"base_model", "Qwen- & DeepSeek-VL-7B-Chat"},
                {"lora_targets", json::array({"q", "k", "v"})},
                {"lora_rank", 8},
                {"lora_alpha", 32},
                {"learning_rate", 1e-4},
                {"optimizer", "AdamW"},
                {"lr_scheduler", "linear"},
                {"precision", "bf16"},
                {"batch_size", 1},
                {"gradient_accumulation_steps", 16}};
}

void to_json(json& j, const SftRecord& r) {
    j = json{{"variant", to_string(r.variant)}, {"prompt", r.prompt}, {"images", r.images}, {"target", r.target},
             {"meta", r.meta}};
}

namespace {

/// Keeps every minority-class label and the first |minority| majority
/// labels in hash order of their ids.
std::vector<const BoundaryLabel*> balance_labels(std::vector<const BoundaryLabel*> labels) {
    std::vector<const BoundaryLabel*> pos;
    std::vector<const BoundaryLabel*> neg;
    for (const auto* l : labels) (l->hard ? pos : neg).push_back(l);
    auto& major = pos.size() > neg.size() ? pos : neg;
    auto& minor = pos.size() > neg.size() ? neg : pos;
    std::sort(major.begin(), major.end(),
              [](const auto* a, const auto* b) { return sha256_hex(a->query_id) < sha256_hex(b->query_id); });
    major.resize(minor.size());
    std::vector<const BoundaryLabel*> out(pos.begin(), pos.end());
    out.insert(out.end(), neg.begin(), neg.end());
    std::sort(out.begin(), out.end(), [](const auto* a, const auto* b) { return a->query_id < b->query_id; });
    return out;
}

}  // namespace

std::vector<SftRecord> make_sft_records(std::span<const BoundaryLabel> labels, std::span<const QueryRecord> queries,
                                        const TemplateSet& templates, const SftExportOptions& options) {
    std::map<std::string_view, const QueryRecord*> by_id;
    for (const auto& q : queries) by_id[q.id] = &q;

    std::vector<const BoundaryLabel*> picked;
    for (const auto& l : labels) picked.push_back(&l);
    std::sort(picked.begin(), picked.end(), [](const auto* a, const auto* b) { return a->query_id < b->query_id; });
    if (options.balance) picked = balance_labels(std::move(picked));

    const auto tpl = templates.get(options.variant == SftVariant::Hard ? TemplateVariant::Hard : TemplateVariant::Soft,
                                   options.dialect);
    std::vector<SftRecord> out;
    out.reserve(picked.size());
    for (const auto* l : picked) {
        auto it = by_id.find(l->query_id);
        if (it == by_id.end()) throw IntegrityError(fmt::format("label for unknown query {}", l->query_id));
        const QueryRecord& q = *it->second;
        SftRecord r;
        r.variant = options.variant;
        auto message = render_prompt(tpl, q);
        r.prompt = message.flatten();
        r.images = q.images;
        if (options.variant == SftVariant::Hard) {
            r.target = l->hard ? "true" : "false";
        } else {
            if (!l->soft) throw ValidationError(fmt::format("label {} has no soft score", l->query_id));
            r.target = format_soft_target(options.scale.clamp(*l->soft));
        }
        r.meta = json{{"source", q.source},
                      {"query_id", q.id},
                      {"epsilon", l->epsilon ? json(*l->epsilon) : json(nullptr)},
                      {"scale", {{"s_w", options.scale.wrong}, {"s_c", options.scale.correct}}},
                      {"hyperparameters", trainer_hyperparameters()}};
        out.push_back(std::move(r));
    }
    return out;
}

SftExportResult export_sft(std::span<const BoundaryLabel> labels, std::span<const QueryRecord> queries,
                           const TemplateSet& templates, const SftExportOptions& options, const fs::path& out) {
    auto records = make_sft_records(labels, queries, templates, options);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::string content;
    for (const auto& r : records) content += json(r).dump() + "\n";
    {
        std::ofstream f(out, std::ios::binary | std::ios::trunc);
        if (!f) throw IngestionError(fmt::format("cannot write {}", out.string()));
        f << content;
    }
    std::optional<double> epsilon;
    std::size_t positives = 0;
    for (const auto& l : labels) {
        if (l.epsilon) epsilon = l.epsilon;
        if (l.hard) ++positives;
    }
    const auto tpl = templates.get(options.variant == SftVariant::Hard ? TemplateVariant::Hard : TemplateVariant::Soft,
                                   options.dialect);
    json manifest{{"variant", to_string(options.variant)},
                  {"records", records.size()},
                  {"data_sha256", sha256_hex(content)},
                  {"epsilon", epsilon ? json(*epsilon) : json(nullptr)},
                  {"scale", {{"s_w", options.scale.wrong}, {"s_c", options.scale.correct}}},
                  {"dialect", options.dialect},
                  {"template_sha256", tpl.hash()},
                  {"balanced", options.balance},
                  {"labels", labels.size()},
                  {"labels_search_needed", positives},
                  {"target_semantics", options.variant == SftVariant::Hard
                                           ? "\"true\" = outside the knowledge boundary (search needed)"
                                           : "flipped mean score, one decimal; higher = search more necessary"},
                  {"hyperparameters", trainer_hyperparameters()}};
    fs::path manifest_path = out;
    manifest_path += ".manifest.json";
    std::ofstream m(manifest_path, std::ios::binary | std::ios::trunc);
    m << manifest.dump(2) << '\n';
    return SftExportResult{out, manifest_path, records.size()};
}

namespace {

bool parse_bool_value(const json& v, const std::string& where) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_number_integer()) {
        auto n = v.get<long long>();
        if (n == 0 || n == 1) return n == 1;
    }
    if (v.is_string()) {
        std::string s = text::normalize(v.get<std::string>());
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
    }
    throw ParseError(fmt::format("{}: not a boolean: {}", where, v.dump()));
}

}  // namespace

std::vector<BoundaryLabel> import_human_labels(const fs::path& path, std::span<const QueryRecord> queries) {
    std::ifstream in(path);
    if (!in) throw IngestionError(fmt::format("cannot open {}", path.string()));
    std::map<std::string, std::size_t> known;
    for (const auto& q : queries) known[q.id] = 0;

    std::map<std::string, bool> labels;
    std::string line;
    std::size_t lineno = 0;
    const bool csv = path.extension() == ".csv";
    while (std::getline(in, line)) {
        ++lineno;
        auto trimmed = text::trim(line);
        if (trimmed.empty()) continue;
        const std::string where = fmt::format("{}:{}", path.string(), lineno);
        std::string id;
        bool value = false;
        if (csv) {
            auto comma = trimmed.find(',');
            if (comma == std::string_view::npos) throw ParseError(where + ": expected query_id,label");
            id = std::string(text::trim(trimmed.substr(0, comma)));
            std::string raw(text::trim(trimmed.substr(comma + 1)));
            if (lineno == 1 && (id == "query_id" || id == "id")) continue;
            value = parse_bool_value(json(raw), where);
        } else {
            json j;
            try {
                j = json::parse(trimmed);
            } catch (const json::exception& e) {
                throw ParseError(fmt::format("{}: {}", where, e.what()));
            }
            id = j.at("query_id").get<std::string>();
            const json& v = j.contains("search_needed") ? j.at("search_needed") : j.at("label");
            value = parse_bool_value(v, where);
        }
        if (!known.contains(id)) throw IntegrityError(fmt::format("{}: unknown query id {}", where, id));
        auto [it, inserted] = labels.emplace(id, value);
        if (!inserted && it->second != value) {
            throw IntegrityError(fmt::format("{}: conflicting human labels for {}", where, id));
        }
    }
    std::vector<BoundaryLabel> out;
    for (const auto& [id, v] : labels) out.push_back(BoundaryLabel{id, std::nullopt, v, std::nullopt, std::nullopt});
    return out;
}

std::vector<BoundaryLabel> load_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError(fmt::format("cannot open {}", path.string()));
    std::vector<BoundaryLabel> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<BoundaryLabel>());
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
        }
    }
    return out;
}

void write_labels(const fs::path& path, std::span<const BoundaryLabel> labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError(fmt::format("cannot write {}", path.string()));
    for (const auto& l : labels) out << json(l).dump() << '\n';
}

}  // namespace kbgate
