#pragma once

#include <cstddef>
#include <functional>

namespace supforge {

/// Worker count for evaluation loops: SUPFORGE_THREADS when set to a
/// positive integer, otherwise the hardware concurrency.
unsigned thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Each index
/// runs exactly once; callers write results by index so the outcome does
/// not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace supforge
