#pragma once

#include <cstddef>
#include <functional>

namespace morphkit {

// Worker count: MORPHKIT_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Runs body(i) for i in [0, n). Each index is processed exactly once; callers
// write results into pre-sized slots so the merge order is fixed.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace morphkit
