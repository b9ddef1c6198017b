// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <condition_variable>
#include <mutex>

namespace kbgate {

struct RateLimit {
    double requests_per_second = 10.0;
    int max_in_flight = 8;

    void validate() const;
};

struct RetryPolicy {
    int max_retries = 3;
    double base_backoff_ms = 200.0;
    double max_backoff_ms = 5000.0;

    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
    std::chrono::milliseconds backoff(int attempt) const;
};

/// Token spacing on request starts plus a bounded in-flight window.
class RateLimiter {
public:
    explicit RateLimiter(RateLimit limit);

    class Permit {
    public:
        explicit Permit(RateLimiter* owner) : owner_(owner) {}
        Permit(Permit&& other) noexcept : owner_(other.owner_) { other.owner_ = nullptr; }
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;
        Permit& operator=(Permit&&) = delete;
        ~Permit();

    private:
        RateLimiter* owner_;
    };

    /// Blocks until both an in-flight slot and a start slot are available.
    Permit acquire();

    int in_flight() const;
    int peak_in_flight() const;

private:
    void release();

    RateLimit limit_;
    mutable std::mutex mutex_;
    std::condition_variable slot_free_;
    int in_flight_ = 0;
    int peak_ = 0;
    std::chrono::steady_clock::time_point next_start_{};
};

}  // namespace kbgate
