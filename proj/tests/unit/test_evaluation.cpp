// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>

#include <fmt/format.h>

#include <map>
#include <random>

#include "fixtures.hpp"
#include "kbgate/boundary_dataset.hpp"
#include "kbgate/error.hpp"
#include "kbgate/evaluation.hpp"
#include "kbgate/runstore.hpp"
#include "kbgate/text.hpp"

using namespace kbgate;
using kbgate::testing::MockStack;
using kbgate::testing::TempDir;
using nlohmann::json;

namespace {

/// Multiset overlap computed with counting maps (independent of the library).
double token_oracle(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty()) return 0.0;
    std::map<std::string, int> g;
    for (const auto& t : gold) ++g[t];
    int hit = 0;
    for (const auto& t : pred) {
        auto it = g.find(t);
        if (it != g.end() && it->second > 0) {
            --it->second;
            ++hit;
        }
    }
    return 100.0 * hit / static_cast<double>(pred.size());
}

ItemMetrics item(const std::string& id, std::optional<double> llm, double tok, bool retrieved, bool failed = false,
                 const std::string& source = "lifevqa") {
    return ItemMetrics{id, source, llm, tok, retrieved, failed};
}

}  // namespace

TEST_CASE("judge scores rescale onto 0..100", "[evaluation]") {
    ScoreScale s;
    CHECK(rescale_to_percent(1.0, s) == 0.0);
    CHECK(rescale_to_percent(5.0, s) == 100.0);
    CHECK(rescale_to_percent(3.0, s) == 50.0);
    CHECK(rescale_to_percent(4.2, s) == Catch::Approx(80.0));
    CHECK(rescale_to_percent(3.0, ScoreScale{0.0, 10.0}) == 30.0);
}

TEST_CASE("token accuracy is multiset precision", "[evaluation]") {
    CHECK(token_accuracy("the red red dog", "red dog dog") == 50.0);
    CHECK(token_accuracy("Red, Dog!", "red dog") == 100.0);
    CHECK(token_accuracy("", "red") == 0.0);
    CHECK(token_accuracy("cat", "") == 0.0);
    CHECK(token_accuracy("a b c d", "d") == 25.0);
}

TEST_CASE("random token accuracy agrees with a counting oracle", "[evaluation][property]") {
    std::mt19937 rng(31);
    const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f"};
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<std::string> pred, gold;
        for (std::size_t i = 0, n = rng() % 7; i < n; ++i) pred.push_back(vocab[rng() % vocab.size()]);
        for (std::size_t i = 0, n = rng() % 7; i < n; ++i) gold.push_back(vocab[rng() % vocab.size()]);
        std::string ps, gs;
        for (const auto& t : pred) ps += t + " ";
        for (const auto& t : gold) gs += t + " ";
        double got = token_accuracy(ps, gs);
        CHECK(got == Catch::Approx(token_oracle(pred, gold)).margin(1e-12));
        CHECK(got >= 0.0);
        CHECK(got <= 100.0);
    }
}

TEST_CASE("search ratio", "[evaluation]") {
    const bool r[] = {true, false, true, true};
    CHECK(search_ratio(std::span<const bool>(r)) == 75.0);
    CHECK_THROWS_AS(search_ratio(std::span<const bool>{}), ValidationError);
    std::vector<GateDecision> d(2);
    d[0].retrieve = true;
    CHECK(search_ratio(d) == 50.0);
}

TEST_CASE("aggregates exclude failures and average llm over evaluated rows", "[evaluation]") {
    std::vector<ItemMetrics> items{item("a", 100.0, 50.0, true), item("b", std::nullopt, 100.0, false),
                                   item("c", 50.0, 0.0, true), item("d", std::nullopt, 0.0, true, true)};
    auto a = aggregate_metrics(items);
    CHECK(a.n == 3);
    CHECK(a.failures == 1);
    CHECK(a.llm_evaluated == 2);
    CHECK(a.llm == 75.0);
    CHECK(a.token_acc == 50.0);
    CHECK(a.search_ratio == Catch::Approx(200.0 / 3));
}

TEST_CASE("epsilon sweep endpoints, monotonicity and fallbacks", "[evaluation][property]") {
    std::mt19937 rng(37);
    std::vector<ItemMetrics> none, all;
    std::map<std::string, std::optional<double>> soft;
    for (int i = 0; i < 120; ++i) {
        std::string id = fmt::format("q{:03d}", i);
        none.push_back(item(id, 10.0 * (rng() % 11), 10.0 * (rng() % 11), false));
        all.push_back(item(id, 10.0 * (rng() % 11), 10.0 * (rng() % 11), true));
        soft[id] = 1.0 + (rng() % 41) / 10.0;
    }
    auto grid = parse_grid("1.0:5.0:0.1");
    grid.push_back(5.5);
    auto rows = epsilon_sweep(grid, soft, none, all);
    REQUIRE(rows.size() == grid.size());
    auto none_agg = aggregate_metrics(none);
    auto all_agg = aggregate_metrics(all);
    CHECK(rows.front().ratio == 100.0);
    CHECK(rows.front().llm == all_agg.llm);
    CHECK(rows.front().token_acc == all_agg.token_acc);
    CHECK(rows.back().ratio == 0.0);
    CHECK(rows.back().llm == none_agg.llm);
    CHECK(rows.back().token_acc == none_agg.token_acc);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].ratio <= rows[i - 1].ratio);

    // Direct oracle for each row.
    for (const auto& row : rows) {
        double llm = 0, tok = 0;
        int k = 0;
        for (std::size_t i = 0; i < none.size(); ++i) {
            bool r = *soft.at(none[i].query_id) >= row.epsilon;
            const auto& m = r ? all[i] : none[i];
            llm += *m.llm;
            tok += m.token_acc;
            k += r;
        }
        CHECK(row.ratio == Catch::Approx(100.0 * k / none.size()));
        CHECK(row.llm == Catch::Approx(llm / none.size()));
        CHECK(row.token_acc == Catch::Approx(tok / none.size()));
    }

    soft["q000"] = std::nullopt;
    auto with_missing = epsilon_sweep(std::vector<double>{5.5}, soft, none, all);
    CHECK(with_missing[0].ratio == Catch::Approx(100.0 / none.size()));
    auto misaligned = all;
    std::swap(misaligned[0], misaligned[1]);
    CHECK_THROWS_AS(epsilon_sweep(grid, soft, none, misaligned), IntegrityError);
    CHECK(sweep_csv(rows).rfind("epsilon,ratio,llm,token_acc\n", 0) == 0);
}

TEST_CASE("grids parse", "[evaluation]") {
    auto g = parse_grid("1.0:5.0:0.1");
    REQUIRE(g.size() == 41);
    CHECK(g[0] == 1.0);
    CHECK(g[15] == 2.5);
    CHECK(g[40] == 5.0);
    CHECK(parse_grid("1, 2.5,4") == std::vector<double>{1.0, 2.5, 4.0});
    CHECK(parse_grid("3:3:1") == std::vector<double>{3.0});
    CHECK_THROWS_AS(parse_grid(""), ValidationError);
    CHECK_THROWS_AS(parse_grid("1:2"), ValidationError);
    CHECK_THROWS_AS(parse_grid("2:1:0.1"), ValidationError);
    CHECK_THROWS_AS(parse_grid("1:2:0"), ValidationError);
    CHECK_THROWS_AS(parse_grid("1,x"), ValidationError);
}

TEST_CASE("held-in accuracy", "[evaluation]") {
    std::vector<BoundaryLabel> labels{BoundaryLabel{"a", 2.0, true, 4.0, 4.0}, BoundaryLabel{"b", 4.5, false, 1.5, 4.0},
                                      BoundaryLabel{"c", 3.0, true, 3.0, 4.0}};
    std::vector<HeldInPrediction> hard{{"a", true, {}}, {"b", true, {}}, {"c", std::nullopt, {}}};
    CHECK(held_in_accuracy(hard, labels, SftVariant::Hard) == Catch::Approx(100.0 / 3));
    std::vector<HeldInPrediction> soft{{"a", {}, 3.5}, {"b", {}, 2.1}, {"c", {}, 3.0}};
    CHECK(held_in_accuracy(soft, labels, SftVariant::Soft, 0.5) == Catch::Approx(200.0 / 3));
    CHECK(held_in_accuracy(soft, labels, SftVariant::Soft, 1.0) == 100.0);
    std::vector<HeldInPrediction> wrong{{"a", true, {}}, {"b", true, {}}, {"z", true, {}}};
    CHECK_THROWS_AS(held_in_accuracy(wrong, labels, SftVariant::Hard), IntegrityError);
    std::vector<HeldInPrediction> few{{"a", true, {}}};
    CHECK_THROWS_AS(held_in_accuracy(few, labels, SftVariant::Hard), IntegrityError);
}

TEST_CASE("evaluation scores records and checkpoints only complete items", "[evaluation]") {
    TempDir dir;
    MockStack stack;
    auto queries = kbgate::testing::mix_fixture(2);
    std::vector<AnswerRecord> records;
    for (const auto& q : queries) {
        AnswerRecord r;
        r.query_id = q.id;
        r.answer_text = q.gold_answer;
        records.push_back(r);
    }
    records[0].error = "answer: reset";
    CheckpointLog log(dir / "c.jsonl", dir / "q.jsonl");
    auto items = evaluate_records(records, queries, stack.setup(), "none", &log);
    REQUIRE(items.size() == queries.size());
    CHECK(std::is_sorted(items.begin(), items.end(),
                         [](const auto& a, const auto& b) { return a.query_id < b.query_id; }));
    for (const auto& item : items) {
        if (item.query_id == records[0].query_id) {
            CHECK(item.failed);
            CHECK(item.token_acc == 0.0);
            CHECK_FALSE(item.llm.has_value());
        } else {
            CHECK(item.token_acc == 100.0);
            REQUIRE(item.llm.has_value());
            CHECK(*item.llm >= 87.5);
        }
    }
    CHECK(log.size() == queries.size());

    MockStack broken;
    broken.gateway.set_backend("judge-llm",
                               std::make_shared<MockBackend>([](const GenerationRequest&, const std::string&) -> std::string {
                                   throw TransportError("down");
                               }));
    CheckpointLog log2(dir / "c2.jsonl", dir / "q2.jsonl");
    auto unevaluated = evaluate_records(records, queries, broken.setup(), "none", &log2);
    CHECK(log2.size() == 1);  // only the failed row, which needs no judge
    for (const auto& item : unevaluated) CHECK_FALSE(item.llm.has_value());

    AnswerRecord stray;
    stray.query_id = "nope";
    std::vector<AnswerRecord> bad{stray};
    CHECK_THROWS_AS(evaluate_records(bad, queries, stack.setup(), "x"), IntegrityError);
}

TEST_CASE("judge consistency reports per-setting gaps", "[evaluation]") {
    auto profiles = kbgate::testing::mock_profiles();
    auto b = profiles[1];
    b.name = "judge-b";
    b.model_name = "judge-b";
    b.mock = json{{"kind", "judge"}, {"offset", -0.4}};
    profiles.push_back(b);
    MockStack stack(profiles);
    auto queries = kbgate::testing::mix_fixture(3);
    std::map<std::string, std::vector<AnswerRecord>> answers;
    for (const auto& q : queries) {
        AnswerRecord r;
        r.query_id = q.id;
        r.answer_text = "something else";
        answers["none"].push_back(r);
        r.answer_text = q.gold_answer;
        answers["all"].push_back(r);
    }
    auto ja = stack.setup();
    auto jb = stack.setup();
    jb.judge_profile = "judge-b";
    auto res = judge_consistency(answers, queries, ja, jb);
    REQUIRE(res.rows.size() == 2);
    double max_gap = 0;
    for (const auto& r : res.rows) {
        CHECK(r.gap == Catch::Approx(std::abs(r.judge_a - r.judge_b)));
        max_gap = std::max(max_gap, r.gap);
    }
    CHECK(res.max_gap == max_gap);
    CHECK(res.max_gap > 0.0);
    auto same = judge_consistency(answers, queries, ja, ja);
    CHECK(same.max_gap == 0.0);
    auto csv = consistency_csv(res);
    CHECK(csv.find("max_gap,,,") != std::string::npos);
}

TEST_CASE("reports cover each source plus the overall aggregate", "[evaluation]") {
    std::map<AnswerMode, std::vector<ItemMetrics>> metrics;
    metrics[AnswerMode::None] = {item("a", 50.0, 40.0, false, false, "nocaps"), item("b", 20.0, 10.0, false, false, "lifevqa")};
    metrics[AnswerMode::Skb] = {item("a", 70.0, 60.0, true, false, "nocaps"), item("b", 40.0, 30.0, false, false, "lifevqa")};
    auto rep = emit_report(metrics);
    CHECK(rep.datasets == std::vector<std::string>{"lifevqa", "nocaps", "all"});
    REQUIRE(rep.find("all", AnswerMode::Skb) != nullptr);
    CHECK(rep.find("all", AnswerMode::Skb)->metrics.llm == 55.0);
    CHECK(rep.find("all", AnswerMode::Skb)->metrics.search_ratio == 50.0);
    CHECK(rep.find("nocaps", AnswerMode::None)->metrics.token_acc == 40.0);
    CHECK(rep.find("all", AnswerMode::Hkb) == nullptr);
    auto table = report_table(rep);
    CHECK(table.find("No RAG") != std::string::npos);
    CHECK(table.find("SKB") != std::string::npos);
    CHECK(table.find("55.00") != std::string::npos);
    CHECK(report_csv(rep).find("all,skb,2,0,55,45,50") != std::string::npos);
}
