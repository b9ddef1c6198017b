// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs of the kbgate executable in mock mode.

#include <catch_amalgamated.hpp>

#include <filesystem>

#include "fixtures.hpp"
#include "kbgate/query.hpp"

using kbgate::testing::read_file;
using kbgate::testing::run_cli_process;
using kbgate::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    TempDir tmp;
    fs::path queries;
    fs::path config;

    explicit Workspace(std::size_t per_source = 2) {
        queries = tmp / "queries.jsonl";
        kbgate::write_queries(queries, kbgate::testing::mix_fixture(per_source));
        config = tmp / "config.json";
        kbgate::testing::write_file(config, R"({
  // second judge for the consistency check
  "profiles": [{"name": "judge-b", "backend": "mock", "model": "judge-b", "mock": {"kind": "judge", "offset": -0.3}}]
})");
    }

    std::vector<std::string> base(const std::string& run) const {
        return {"--mock", "--config", config.string(), "--run-dir", (tmp / run).string(), "--parallelism", "4"};
    }

    int run(const std::string& run_dir, std::vector<std::string> args, std::string* out = nullptr) const {
        auto all = base(run_dir);
        all.insert(all.end(), args.begin(), args.end());
        std::string text;
        int code = run_cli_process(all, &text);
        if (out) *out = text;
        UNSCOPED_INFO("kbgate " << args.front() << " output:\n" << text);
        return code;
    }
};

}  // namespace

TEST_CASE("cli: full mock pipeline", "[cli]") {
    Workspace ws;
    const std::string r = "run";
    const fs::path dir = ws.tmp / r;
    REQUIRE(ws.run(r, {"build-dataset", "--queries", ws.queries.string(), "-R", "3"}) == 0);
    CHECK(fs::exists(dir / "judged.jsonl"));
    CHECK(fs::exists(dir / "stats.txt"));
    REQUIRE(ws.run(r, {"label", "--epsilon", "4.0"}) == 0);
    CHECK(fs::exists(dir / "labels.jsonl"));
    REQUIRE(ws.run(r, {"export-sft", "--variant", "soft"}) == 0);
    CHECK(fs::exists(dir / "sft_soft.jsonl"));
    CHECK(fs::exists(dir / "sft_soft.jsonl.manifest.json"));
    REQUIRE(ws.run(r, {"export-sft", "--variant", "hard", "--balance"}) == 0);
    REQUIRE(ws.run(r, {"gate", "--variant", "skb", "--epsilon", "3.5"}) == 0);
    CHECK(fs::exists(dir / "decisions_skb.jsonl"));
    REQUIRE(ws.run(r, {"answer"}) == 0);
    for (const char* m : {"none", "all", "prompt", "hkb", "skb"}) {
        CHECK(fs::exists(dir / (std::string("answers_") + m + ".jsonl")));
    }
    CHECK(fs::exists(dir / "timing.csv"));
    REQUIRE(ws.run(r, {"eval"}) == 0);
    auto table = read_file(dir / "report.txt");
    CHECK(table.find("No RAG") != std::string::npos);
    CHECK(table.find("all") != std::string::npos);
    REQUIRE(ws.run(r, {"sweep", "--grid", "1.0:5.0:0.5"}) == 0);
    auto sweep = read_file(dir / "sweep.csv");
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 10);
    REQUIRE(ws.run(r, {"held-in", "--variant", "soft"}) == 0);
    CHECK(fs::exists(dir / "held_in_soft.json"));
    REQUIRE(ws.run(r, {"consistency", "--judge-b", "judge-b", "--modes", "none,all"}) == 0);
    CHECK(read_file(dir / "consistency.csv").find("max_gap") != std::string::npos);
    std::string stats;
    REQUIRE(ws.run(r, {"stats"}, &stats) == 0);
    CHECK(stats.find("Avg. Score") != std::string::npos);
    CHECK(stats.find("lifevqa") != std::string::npos);

    // Manifest records every stage without secrets.
    auto manifest = read_file(dir / "manifest.jsonl");
    CHECK(manifest.find("\"stage\":\"build-dataset\"") != std::string::npos);
    CHECK(manifest.find("\"completed\"") != std::string::npos);

    // A completed stage with unchanged inputs is a no-op.
    std::string again;
    REQUIRE(ws.run(r, {"answer"}, &again) == 0);
    CHECK(again.find("already complete") != std::string::npos);
}

TEST_CASE("cli: interrupted build resumes to the same result", "[cli][resume]") {
    Workspace ws(3);
    REQUIRE(ws.run("clean", {"build-dataset", "--queries", ws.queries.string(), "-R", "3"}) == 0);

    auto args = std::vector<std::string>{"--halt-after-units", "25", "build-dataset", "--queries", ws.queries.string(), "-R", "3"};
    CHECK(ws.run("killed", args) == 137);
    CHECK_FALSE(fs::exists(ws.tmp / "killed/judged.jsonl"));
    std::string refused;
    CHECK(ws.run("killed", {"build-dataset", "--queries", ws.queries.string(), "-R", "3"}, &refused) == 3);
    CHECK(refused.find("--resume") != std::string::npos);

    auto resume = ws.base("killed");
    resume.insert(resume.end(), {"--resume", "build-dataset", "--queries", ws.queries.string(), "-R", "3"});
    REQUIRE(run_cli_process(resume) == 0);
    CHECK(read_file(ws.tmp / "killed/judged.jsonl") == read_file(ws.tmp / "clean/judged.jsonl"));
    CHECK(read_file(ws.tmp / "killed/stats.csv") == read_file(ws.tmp / "clean/stats.csv"));
}

TEST_CASE("cli: configuration drift is refused", "[cli][resume]") {
    Workspace ws(1);
    REQUIRE(ws.run("run", {"build-dataset", "--queries", ws.queries.string(), "-R", "2"}) == 0);
    std::string out;
    CHECK(ws.run("run", {"build-dataset", "--queries", ws.queries.string(), "-R", "3"}, &out) == 3);
    CHECK(out.find("config hash") != std::string::npos);
}

TEST_CASE("cli: usage errors exit 1", "[cli]") {
    Workspace ws(1);
    CHECK(run_cli_process({"--bogus"}) == 1);
    CHECK(ws.run("run", {"build-dataset"}) == 1);
    CHECK(ws.run("run", {"gate", "--variant", "sometimes", "--queries", ws.queries.string()}) == 1);
    CHECK(ws.run("run", {"gate", "--variant", "skb", "--epsilon", "0.2", "--queries", ws.queries.string()}) == 1);
    CHECK(run_cli_process({"--help"}) == 0);
}
