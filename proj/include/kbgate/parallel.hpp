// Copyright (c) 2026, The kbgate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace kbgate {

/// Runs fn(0..n-1) on up to `parallelism` worker threads. Work is pulled
/// from a shared counter, so completion order is unspecified. The first
/// exception thrown stops further scheduling and is rethrown.
void parallel_for(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& fn);

}  // namespace kbgate
