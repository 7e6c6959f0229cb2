#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace fredholm {

/// Worker count: FREDHOLM_THREADS if set, hardware concurrency otherwise.
inline unsigned thread_count() {
  if (const char* env = std::getenv("FREDHOLM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(block_begin, block_end) over fixed-size blocks of [0, n).  Block
/// boundaries depend only on n and block_size, never on the worker count, so
/// any per-block computation that writes disjoint output is bitwise
/// reproducible under a different FREDHOLM_THREADS setting.
template <typename Fn>
void parallel_for_blocks(std::size_t n, std::size_t block_size, Fn&& fn) {
  if (n == 0) return;
  const std::size_t n_blocks = (n + block_size - 1) / block_size;
  const unsigned workers = std::min<std::size_t>(thread_count(), n_blocks);
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b)
      fn(b * block_size, std::min(n, (b + 1) * block_size));
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t b = w; b < n_blocks; b += workers)
        fn(b * block_size, std::min(n, (b + 1) * block_size));
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace fredholm
