#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace cyrisk {

// Chunked parallel for over [0, n). Each index owns its output slot, so the
// result is independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, int n_threads, Fn&& fn) {
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t workers = n_threads > 0 ? static_cast<std::size_t>(n_threads)
                                      : (hw ? hw : 1);
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      std::size_t lo = n * w / workers;
      std::size_t hi = n * (w + 1) / workers;
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace cyrisk
