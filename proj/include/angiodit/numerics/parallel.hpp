#pragma once

#include <cstdint>
#include <functional>

namespace angiodit {

// Worker cap: ANGIODIT_THREADS if set and positive, else hardware concurrency.
int worker_count();

// Runs body(i) for i in [0, n). Work is statically partitioned so results
// that are written to distinct slots do not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body,
                  int max_workers = 0);

}  // namespace angiodit
