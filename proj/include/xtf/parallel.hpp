#pragma once

#include <cstddef>
#include <functional>

namespace xtf {

// Worker cap from XTF_THREADS; 0 or unset means hardware concurrency.
int worker_count();

// Calls fn(i) for i in [0, n). Work is striped over worker threads; callers
// write results into slot i so the outcome does not depend on scheduling.
// The first exception thrown by any fn is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace xtf
