#pragma once

#include <cstddef>
#include <functional>

namespace hyperadapt {

/// Worker count: HYPERADAPT_THREADS when set to a positive integer, else the
/// hardware concurrency (at least 1).
std::size_t thread_limit();

/// Runs fn(i) for i in [0, n) on up to thread_limit() threads. Each index is
/// executed exactly once; callers write results into per-index slots so the
/// outcome never depends on scheduling. The exception from the lowest failing
/// index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hyperadapt
