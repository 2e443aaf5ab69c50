#pragma once

#include <cstddef>
#include <functional>

namespace trajex {

// Worker count from NEXT_THREADS (0 or unset = hardware concurrency).
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Results must be written to per-index slots so
// the outcome is independent of scheduling. If tasks throw, the exception of
// the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t threads = 0);

}  // namespace trajex
