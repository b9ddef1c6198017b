// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbgate/rate_limit.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "kbgate/error.hpp"

namespace kbgate {

void RateLimit::validate() const {
    if (!(requests_per_second > 0.0) || max_in_flight < 1) {
        throw ConfigError(fmt::format("rate limit must be positive (rps={}, max_in_flight={})", requests_per_second,
                                      max_in_flight));
    }
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
    double ms = base_backoff_ms * std::pow(2.0, std::max(0, attempt - 1));
    return std::chrono::milliseconds(static_cast<long long>(std::min(ms, max_backoff_ms)));
}

RateLimiter::RateLimiter(RateLimit limit) : limit_(limit) { limit_.validate(); }

RateLimiter::Permit::~Permit() {
    if (owner_) owner_->release();
}

RateLimiter::Permit RateLimiter::acquire() {
    using clock = std::chrono::steady_clock;
    clock::time_point start;
    {
        std::unique_lock lock(mutex_);
        slot_free_.wait(lock, [&] { return in_flight_ < limit_.max_in_flight; });
        ++in_flight_;
        peak_ = std::max(peak_, in_flight_);
        auto spacing = std::chrono::duration_cast<clock::duration>(
            std::chrono::duration<double>(1.0 / limit_.requests_per_second));
        auto now = clock::now();
        start = std::max(now, next_start_);
        next_start_ = start + spacing;
    }
    std::this_thread::sleep_until(start);
    return Permit(this);
}

void RateLimiter::release() {
    {
        std::lock_guard lock(mutex_);
        --in_flight_;
    }
    slot_free_.notify_one();
}

int RateLimiter::in_flight() const {
    std::lock_guard lock(mutex_);
    return in_flight_;
}

int RateLimiter::peak_in_flight() const {
    std::lock_guard lock(mutex_);
    return peak_;
}

}  // namespace kbgate
