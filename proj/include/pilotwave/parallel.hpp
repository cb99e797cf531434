#ifndef PILOTWAVE_PARALLEL_HPP
#define PILOTWAVE_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace pilotwave {

// Process-wide default worker count. 0 means "use hardware concurrency".
void set_default_threads(int n);
int default_threads();

// Resolve a per-call request (0 = library default) to a concrete count >= 1.
int effective_threads(int requested);

// Run fn(begin, end) over a static partition of [0, n) on `threads` workers.
// Workers own disjoint index ranges and must write only to per-index slots,
// which keeps results identical for every thread count.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  int threads = 0);

}  // namespace pilotwave

#endif
