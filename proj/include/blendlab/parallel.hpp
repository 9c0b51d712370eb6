#pragma once

#include <cstddef>
#include <functional>

namespace blendlab {

// Process-wide worker count; 0 means hardware concurrency.
void set_thread_count(int n);
int thread_count();

/// Runs body(i) for i in [0, n). Items are claimed dynamically, so callers must
/// write results into per-item slots and reduce them in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace blendlab
