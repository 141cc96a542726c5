#pragma once

#include <cstddef>
#include <functional>

namespace mfnet {

// Global worker count used by parallel_for. Defaults to 1.
void set_thread_count(int n);
int thread_count();

// Runs body(i) for i in [0, n). Work is split into contiguous static chunks;
// callers write only to slot i, so results never depend on the thread count.
// Nested calls from inside a worker run serially.
// Reductions are done by the caller afterwards in ascending index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mfnet
