#include "numerics/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace numerics {

std::size_t resolve_threads(std::size_t configured) {
  if (configured > 0) return configured;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

void parallel_for(std::size_t n, std::size_t n_threads,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  n_threads = std::min(n_threads, n);
  if (n_threads <= 1) {
    fn(0, n, 0);
    return;
  }
  const std::size_t per = (n + n_threads - 1) / n_threads;
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t w = 0; w < n_threads; ++w) {
    const std::size_t begin = std::min(n, w * per);
    const std::size_t end = std::min(n, begin + per);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace numerics
