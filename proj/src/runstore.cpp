// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/runstore.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fcntl.h>
#include <random>
#include <sstream>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>

#include "kbgate/digest.hpp"
#include "kbgate/error.hpp"

namespace kbgate {

namespace fs = std::filesystem;
using nlohmann::json;

std::string UnitKey::str() const { return fmt::format("{}/{}/{}", query_id, stage, index); }

std::string utc_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

FileDigest digest_of(const fs::path& path) { return FileDigest{path.string(), sha256_file(path)}; }

// ---------------------------------------------------------------------------

CheckpointLog::CheckpointLog(fs::path file, fs::path quarantine, std::shared_ptr<std::atomic<long>> halt_countdown)
    : file_(std::move(file)), quarantine_file_(std::move(quarantine)), halt_countdown_(std::move(halt_countdown)) {
    fs::create_directories(file_.parent_path());
    load();
    out_.open(file_, std::ios::app | std::ios::binary);
    if (!out_) throw IngestionError(fmt::format("cannot open checkpoint log {}", file_.string()));
}

void CheckpointLog::load() {
    std::ifstream in(file_, std::ios::binary);
    if (!in) return;
    std::vector<std::string> good;
    std::vector<std::string> bad;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string reason;
        try {
            json j = json::parse(line);
            UnitKey unit{j.at("q").get<std::string>(), j.at("s").get<std::string>(), j.at("i").get<int>()};
            const json& payload = j.at("payload");
            if (sha256_hex(payload.dump()) != j.at("digest").get<std::string>()) {
                reason = "digest mismatch";
            } else {
                done_[unit] = payload;
                good.push_back(line);
                continue;
            }
        } catch (const json::exception& e) {
            reason = e.what();
        }
        bad.push_back(line);
        quarantine_reasons_.push_back(fmt::format("{}:{}: {}", file_.filename().string(), lineno, reason));
    }
    in.close();
    quarantined_ = bad.size();
    if (bad.empty()) {
        // A torn final line without newline would glue onto the next append.
        std::ifstream tail(file_, std::ios::binary | std::ios::ate);
        if (tail.tellg() > 0) {
            tail.seekg(-1, std::ios::end);
            char last = 0;
            tail.get(last);
            if (last != '\n') {
                std::ofstream fix(file_, std::ios::app | std::ios::binary);
                fix << '\n';
            }
        }
        return;
    }
    fs::create_directories(quarantine_file_.parent_path());
    {
        std::ofstream q(quarantine_file_, std::ios::app | std::ios::binary);
        for (std::size_t i = 0; i < bad.size(); ++i) {
            q << json{{"reason", quarantine_reasons_[i]}, {"line", bad[i]}, {"at", utc_timestamp()}}.dump() << '\n';
        }
    }
    const fs::path tmp = file_.string() + ".rewrite";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        for (const auto& l : good) out << l << '\n';
    }
    fs::rename(tmp, file_);
}

bool CheckpointLog::contains(const UnitKey& unit) const {
    std::lock_guard lock(mutex_);
    return done_.contains(unit);
}

std::optional<json> CheckpointLog::get(const UnitKey& unit) const {
    std::lock_guard lock(mutex_);
    auto it = done_.find(unit);
    if (it == done_.end()) return std::nullopt;
    return it->second;
}

void CheckpointLog::append(const UnitKey& unit, const json& payload) {
    json line{{"q", unit.query_id}, {"s", unit.stage}, {"i", unit.index}, {"payload", payload},
              {"digest", sha256_hex(payload.dump())}};
    std::lock_guard lock(mutex_);
    out_ << line.dump() << '\n';
    out_.flush();
    done_[unit] = payload;
    if (halt_countdown_ && halt_countdown_->load() >= 0 && --(*halt_countdown_) <= 0) {
        std::_Exit(137);
    }
}

std::size_t CheckpointLog::size() const {
    std::lock_guard lock(mutex_);
    return done_.size();
}

ContinuationPlan plan_continuation(const CheckpointLog& log, const std::vector<UnitKey>& all) {
    ContinuationPlan plan;
    plan.quarantined = log.quarantined();
    for (const auto& u : all) {
        if (log.contains(u)) {
            ++plan.completed;
        } else {
            plan.scheduled.push_back(u);
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------

json ManifestEntry::to_json() const {
    auto files = [](const std::vector<FileDigest>& v) {
        json a = json::array();
        for (const auto& f : v) a.push_back(json{{"path", f.path}, {"sha256", f.sha256}});
        return a;
    };
    return json{{"run_id", run_id},
                {"stage", stage},
                {"status", status},
                {"config_hash", config_hash},
                {"template_hashes", template_hashes},
                {"profiles", profiles},
                {"inputs", files(inputs)},
                {"outputs", files(outputs)},
                {"params", params},
                {"started_at", started_at},
                {"finished_at", finished_at},
                {"tool_version", tool_version}};
}

ManifestEntry ManifestEntry::from_json(const json& j) {
    auto files = [](const json& a) {
        std::vector<FileDigest> v;
        for (const auto& f : a) v.push_back(FileDigest{f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
        return v;
    };
    ManifestEntry e;
    e.run_id = j.value("run_id", "");
    e.stage = j.value("stage", "");
    e.status = j.value("status", "");
    e.config_hash = j.value("config_hash", "");
    e.template_hashes = j.value("template_hashes", json::object());
    e.profiles = j.value("profiles", std::vector<std::string>{});
    e.inputs = files(j.value("inputs", json::array()));
    e.outputs = files(j.value("outputs", json::array()));
    e.params = j.value("params", json::object());
    e.started_at = j.value("started_at", "");
    e.finished_at = j.value("finished_at", "");
    e.tool_version = j.value("tool_version", "");
    return e;
}

// ---------------------------------------------------------------------------

RunStore::RunStore(fs::path dir, RunOptions options) : dir_(std::move(dir)), options_(options) {
    fs::create_directories(dir_);
    const fs::path lock_path = dir_ / ".lock";
    lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT, 0644);
    if (lock_fd_ < 0) throw ResumeError(fmt::format("cannot open lock file {}", lock_path.string()));
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(lock_fd_);
        lock_fd_ = -1;
        throw ResumeError(fmt::format("run dir {} is locked by another process", dir_.string()));
    }
    const fs::path run_file = dir_ / "run.json";
    if (fs::exists(run_file)) {
        std::ifstream in(run_file);
        run_id_ = json::parse(in).value("run_id", "");
    }
    if (run_id_.empty()) {
        std::random_device rd;
        run_id_ = fmt::format("run-{:08x}{:08x}", rd(), rd());
        std::ofstream out(run_file);
        out << json{{"run_id", run_id_}, {"created_at", utc_timestamp()}}.dump(2) << '\n';
    }
    if (options_.halt_after_units >= 0) halt_countdown_ = std::make_shared<std::atomic<long>>(options_.halt_after_units);
}

RunStore::~RunStore() {
    if (lock_fd_ >= 0) {
        ::flock(lock_fd_, LOCK_UN);
        ::close(lock_fd_);
    }
}

std::vector<ManifestEntry> RunStore::manifest() const {
    std::vector<ManifestEntry> out;
    std::ifstream in(dir_ / "manifest.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(ManifestEntry::from_json(json::parse(line)));
        } catch (const json::exception&) {
            // torn tail line from an interrupted run
        }
    }
    return out;
}

void RunStore::append_manifest(const ManifestEntry& entry) {
    std::lock_guard lock(mutex_);
    std::ofstream out(dir_ / "manifest.jsonl", std::ios::app | std::ios::binary);
    out << entry.to_json().dump() << '\n';
}

CheckpointLog& RunStore::open_stage(const std::string& stage, const std::string& config_hash) {
    for (const auto& e : manifest()) {
        if (e.stage == stage && e.config_hash != config_hash) {
            throw ResumeError(fmt::format(
                "stage '{}' in {} was run with config hash {}, now {}; use a new run dir", stage, dir_.string(),
                e.config_hash.substr(0, 12), config_hash.substr(0, 12)));
        }
    }
    std::lock_guard lock(mutex_);
    auto it = logs_.find(stage);
    if (it != logs_.end()) return *it->second;
    std::string file_stem = stage;
    for (char& c : file_stem) {
        if (c == ':' || c == '/') c = '_';
    }
    const fs::path file = dir_ / "checkpoints" / (file_stem + ".jsonl");
    const bool had_state = fs::exists(file) && fs::file_size(file) > 0;
    if (had_state && !options_.resume && !is_complete_unlocked(stage, config_hash)) {
        throw ResumeError(fmt::format("stage '{}' has partial state in {}; pass --resume or use a new run dir", stage,
                                      dir_.string()));
    }
    auto log = std::make_unique<CheckpointLog>(file, dir_ / "quarantine" / (file_stem + ".jsonl"), halt_countdown_);
    auto& ref = *log;
    logs_.emplace(stage, std::move(log));
    return ref;
}

bool RunStore::is_complete_unlocked(const std::string& stage, const std::string& config_hash) const {
    auto entries = manifest();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->stage != stage) continue;
        return it->status == "completed" && it->config_hash == config_hash;
    }
    return false;
}

bool RunStore::is_complete(const std::string& stage, const std::string& config_hash,
                           const std::vector<FileDigest>& inputs) const {
    auto entries = manifest();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->stage != stage) continue;
        if (it->status != "completed" || it->config_hash != config_hash) return false;
        if (it->inputs.size() != inputs.size()) return false;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (it->inputs[i].sha256 != inputs[i].sha256) return false;
        }
        for (const auto& out : it->outputs) {
            std::error_code ec;
            if (!fs::exists(out.path, ec)) return false;
            try {
                if (sha256_file(out.path) != out.sha256) return false;
            } catch (const Error&) {
                return false;
            }
        }
        return true;
    }
    return false;
}

}  // namespace kbgate
