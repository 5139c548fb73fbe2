#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace airwayseg {

/// 0 means "all hardware threads".
inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Splits [0, n) into `threads` contiguous chunks and calls fn(begin, end, chunk)
/// for each. Chunk boundaries depend only on n and the chunk count, so callers
/// that write per-chunk partial results and merge them in chunk order get the
/// same answer for any thread count as long as the merge is exact.
template <class F>
void parallel_chunks(std::size_t n, unsigned threads, F&& fn) {
  threads = std::max(1u, std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    fn(std::size_t{0}, n, 0u);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = n * t / threads;
    const std::size_t end = n * (t + 1) / threads;
    pool.emplace_back([&, begin, end, t] {
      try {
        fn(begin, end, t);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Calls fn(i) for every i in [0, n).
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& fn) {
  parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end, unsigned) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace airwayseg
