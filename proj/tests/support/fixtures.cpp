// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "kbgate/digest.hpp"

namespace kbgate::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "kbgate-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

namespace {

const std::vector<std::string> kGoldWords{"red",   "blue",   "dog",    "cat",    "bridge", "tower",  "river",
                                          "paris", "tokyo",  "church", "market", "harbor", "orbit",  "meadow",
                                          "ember", "cobalt", "summit", "castle", "garden", "winter"};

}  // namespace

std::vector<QueryRecord> mix_fixture(std::size_t per_source, unsigned seed) {
    std::mt19937 rng(seed);
    std::vector<QueryRecord> out;
    for (const auto& source : mix_sources()) {
        for (std::size_t i = 0; i < per_source; ++i) {
            QueryRecord q;
            q.id = fmt::format("{}-{:04d}", source, i);
            q.source = source;
            q.text = fmt::format("Question {} from {}: what is shown here?", i, source);
            std::string bytes(24, '\0');
            for (auto& b : bytes) b = static_cast<char>(rng() & 0xff);
            q.images.push_back(ImageRef::from_inline(base64_encode(bytes), "image/png"));
            std::size_t words = 1 + rng() % 3;
            for (std::size_t w = 0; w < words; ++w) {
                if (w) q.gold_answer += ' ';
                q.gold_answer += kGoldWords[rng() % kGoldWords.size()];
            }
            if (source.rfind("dynvqa", 0) == 0) q.gold_query = fmt::format("{} {} latest", source, i);
            out.push_back(std::move(q));
        }
    }
    return out;
}

std::vector<EndpointProfile> mock_profiles() {
    auto make = [](const std::string& name, const std::string& kind) {
        EndpointProfile p;
        p.name = name;
        p.model_name = name;
        p.backend = "mock";
        p.mock = nlohmann::json{{"kind", kind}};
        p.rate_limit.requests_per_second = 1e9;
        p.rate_limit.max_in_flight = 64;
        return p;
    };
    return {make("sampled-vllm", "answer"), make("judge-llm", "judge"), make("kb-hard", "hkb"),
            make("kb-soft", "skb")};
}

MockStack::MockStack(std::vector<EndpointProfile> profiles, std::size_t top_k, double search_latency_ms)
    : gateway(std::move(profiles)),
      search(std::make_shared<MockSearchProvider>(top_k, search_latency_ms)),
      retriever(search, search, RetrievalPolicy::Auto),
      gatekeeper(gateway, templates, GateProfiles{"kb-hard", "kb-soft", "sampled-vllm"}, ScoreScale{}) {}

SamplingSetup MockStack::setup(std::size_t parallelism) const {
    SamplingSetup s;
    s.gateway = const_cast<ModelGateway*>(&gateway);
    s.templates = &templates;
    s.sampled_profile = "sampled-vllm";
    s.judge_profile = "judge-llm";
    s.parallelism = parallelism;
    return s;
}

AnswerOrchestrator MockStack::orchestrator(std::optional<double> epsilon) {
    return AnswerOrchestrator(gateway, retriever, gatekeeper, templates, AnswerOptions{"sampled-vllm", epsilon, 4000});
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
}

fs::path cli_binary() { return KBGATE_CLI_PATH; }

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

}  // namespace

int run_cli_process(const std::vector<std::string>& args, std::string* output) {
    std::string cmd = shell_quote(cli_binary().string());
    for (const auto& a : args) cmd += " " + shell_quote(a);
    cmd += " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    std::string text;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) text.append(buf, n);
    int status = ::pclose(pipe);
    if (output) *output = std::move(text);
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

}  // namespace kbgate::testing
