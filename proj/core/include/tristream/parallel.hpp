#pragma once

#include <cstddef>
#include <functional>

namespace tristream {

/// Worker count: TRISTREAM_THREADS when set to a positive integer, otherwise
/// std::thread::hardware_concurrency() (at least 1).
std::size_t worker_threads();

/// Runs body(i) for i in [0, n). Iterations may run concurrently and must
/// write to disjoint outputs. The first exception thrown is rethrown after
/// all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace tristream
