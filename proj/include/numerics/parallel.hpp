#pragma once

#include <cstddef>
#include <functional>

namespace numerics {

// Splits [0, n) into contiguous ranges and runs fn(begin, end, worker) on up
// to n_threads workers. The partition depends only on (n, n_threads), so any
// computation whose result is a deterministic merge over worker index stays
// reproducible. n_threads <= 1 (or a small n) runs inline on the caller.
void parallel_for(std::size_t n, std::size_t n_threads,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

// Resolves a configured thread count: 0 means "use hardware concurrency".
std::size_t resolve_threads(std::size_t configured);

}  // namespace numerics
