// Copyright (C) 2026 The more-refine authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace more {

/// Caps the number of worker threads used by parallel_for. 0 restores the
/// default (hardware concurrency).
void set_thread_count(int n);
int thread_count();

/// Runs fn(begin, end) over disjoint contiguous ranges covering [0, n).
/// Callers must only write to per-index outputs; any reduction happens
/// afterwards in index order so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace more
