#pragma once

#include <cstddef>
#include <functional>

namespace attndiff {

/// requested > 0 wins; otherwise ATTNDIFF_THREADS, otherwise the number of
/// logical cores. Always at least 1.
int resolve_threads(int requested);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
/// visited exactly once; the first exception thrown is rethrown here.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace attndiff
