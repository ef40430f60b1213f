#pragma once

#include <cstddef>
#include <functional>

namespace hfprune {

// Worker cap: HFPRUNE_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Calls fn(i) for every i in [0, n) on up to worker_count() threads. Work
// items are claimed dynamically, so fn must write only to slot i of any
// shared output. The first exception thrown by fn is rethrown after all
// workers have stopped.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hfprune
