// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run directory: append-only manifest, per-command checkpoint logs, lock.
//
//   <run-dir>/
//     .lock                         single coordinator per run dir
//     run.json                      run id, creation time
//     manifest.jsonl                one entry per stage start/finish
//     checkpoints/<command>.jsonl   completed units, one per line
//     quarantine/<command>.jsonl    corrupted checkpoint lines
//     cache/responses/              generation cache
//     cache/search/                 search cache
//     calls.jsonl                   generation call log

#pragma once

#include <atomic>
#include <compare>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace kbgate {

/// (query, stage, index); index is -1 for per-query units.
struct UnitKey {
    std::string query_id;
    std::string stage;
    int index = -1;

    auto operator<=>(const UnitKey&) const = default;
    std::string str() const;
};

/// Append-only log of completed units. Lines carry a digest of their
/// payload; lines that fail to parse or verify are moved to the quarantine
/// file when the log is opened, and their units count as not done.
class CheckpointLog {
public:
    CheckpointLog(std::filesystem::path file, std::filesystem::path quarantine,
                  std::shared_ptr<std::atomic<long>> halt_countdown = {});

    bool contains(const UnitKey& unit) const;
    std::optional<nlohmann::json> get(const UnitKey& unit) const;
    /// Thread-safe; the line is flushed before returning.
    void append(const UnitKey& unit, const nlohmann::json& payload);

    std::size_t size() const;
    std::size_t quarantined() const { return quarantined_; }
    const std::vector<std::string>& quarantine_reasons() const { return quarantine_reasons_; }

private:
    void load();

    std::filesystem::path file_;
    std::filesystem::path quarantine_file_;
    std::shared_ptr<std::atomic<long>> halt_countdown_;
    mutable std::mutex mutex_;
    std::map<UnitKey, nlohmann::json> done_;
    std::ofstream out_;
    std::size_t quarantined_ = 0;
    std::vector<std::string> quarantine_reasons_;
};

struct ContinuationPlan {
    std::size_t completed = 0;
    std::vector<UnitKey> scheduled;
    std::size_t quarantined = 0;
};

/// Units of `all` not yet present in `log`, in the order given.
ContinuationPlan plan_continuation(const CheckpointLog& log, const std::vector<UnitKey>& all);

struct FileDigest {
    std::string path;
    std::string sha256;
};

struct ManifestEntry {
    std::string run_id;
    std::string stage;
    std::string status;  // "started" | "completed" | "partial"
    std::string config_hash;
    nlohmann::json template_hashes = nlohmann::json::object();
    std::vector<std::string> profiles;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    nlohmann::json params = nlohmann::json::object();
    std::string started_at;
    std::string finished_at;
    std::string tool_version;

    nlohmann::json to_json() const;
    static ManifestEntry from_json(const nlohmann::json& j);
};

struct RunOptions {
    bool resume = false;
    /// Test hook: terminate the process abruptly after this many checkpoint
    /// appends (simulates a kill). Negative disables.
    long halt_after_units = -1;
};

class RunStore {
public:
    explicit RunStore(std::filesystem::path dir, RunOptions options = {});
    ~RunStore();
    RunStore(const RunStore&) = delete;
    RunStore& operator=(const RunStore&) = delete;

    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path path(const std::string& relative) const { return dir_ / relative; }
    const std::string& run_id() const { return run_id_; }
    const RunOptions& options() const { return options_; }

    /// Opens the checkpoint log for a command after checking resume policy:
    /// refuses if an earlier entry for this stage used a different config
    /// hash, or if partial state exists and resume was not requested.
    CheckpointLog& open_stage(const std::string& stage, const std::string& config_hash);

    /// True if the last completed entry for `stage` has the same config hash
    /// and inputs, and every recorded output still has its recorded digest.
    bool is_complete(const std::string& stage, const std::string& config_hash,
                     const std::vector<FileDigest>& inputs) const;

    void append_manifest(const ManifestEntry& entry);
    std::vector<ManifestEntry> manifest() const;

private:
    bool is_complete_unlocked(const std::string& stage, const std::string& config_hash) const;

    std::filesystem::path dir_;
    RunOptions options_;
    std::string run_id_;
    int lock_fd_ = -1;
    std::shared_ptr<std::atomic<long>> halt_countdown_;
    std::map<std::string, std::unique_ptr<CheckpointLog>> logs_;
    mutable std::mutex mutex_;
};

FileDigest digest_of(const std::filesystem::path& path);
std::string utc_timestamp();

}  // namespace kbgate
