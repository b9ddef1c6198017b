// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit and acceptance tests.

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "kbgate/gatekeeper.hpp"
#include "kbgate/gateway.hpp"
#include "kbgate/orchestrator.hpp"
#include "kbgate/prompt.hpp"
#include "kbgate/query.hpp"
#include "kbgate/retrieval.hpp"
#include "kbgate/sampling.hpp"

namespace kbgate::testing {

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline const std::vector<std::string>& mix_sources() {
    static const std::vector<std::string> s{"lifevqa", "privatevqa", "dynvqa-ch", "dynvqa-en", "nocaps", "visual7w"};
    return s;
}

/// Mix-style corpus: every source contributes `per_source` items with an
/// inline image; Dyn-VQA items also carry a gold search query.
std::vector<QueryRecord> mix_fixture(std::size_t per_source = 100, unsigned seed = 7);

/// Mock profiles under the default role names, unthrottled.
std::vector<EndpointProfile> mock_profiles();

/// Gateway, templates, retriever and gatekeeper wired to mocks.
struct MockStack {
    explicit MockStack(std::vector<EndpointProfile> profiles = mock_profiles(), std::size_t top_k = 5,
                       double search_latency_ms = -1.0);

    ModelGateway gateway;
    TemplateSet templates;
    std::shared_ptr<MockSearchProvider> search;
    Retriever retriever;
    Gatekeeper gatekeeper;

    SamplingSetup setup(std::size_t parallelism = 4) const;
    AnswerOrchestrator orchestrator(std::optional<double> epsilon = {});
};

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& content);

/// Path of the built kbgate executable.
std::filesystem::path cli_binary();
/// Runs the CLI in a child process; returns its exit status.
int run_cli_process(const std::vector<std::string>& args, std::string* output = nullptr);

}  // namespace kbgate::testing
