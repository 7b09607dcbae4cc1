// Minimal fork-join helper. VOXRENDER_THREADS caps the worker count.
//
// parallel_for partitions [0,n) into contiguous chunks, one per worker.
// Each index is processed by exactly one thread with a fixed internal
// order, so results are bitwise independent of the thread count. Nested
// calls run inline.
#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace voxrender {

inline unsigned max_threads() {
  static const unsigned n = [] {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VOXRENDER_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(v));
    }
    return hw;
  }();
  return n;
}

namespace detail {
inline bool& in_parallel_region() {
  thread_local bool inside = false;
  return inside;
}
}  // namespace detail

/// Runs fn(i) for i in [0,n). fn must only write state owned by index i.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const unsigned workers = max_threads();
  if (n == 0) return;
  if (workers <= 1 || n == 1 || detail::in_parallel_region()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(workers, n);
  const std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> threads;
  threads.reserve(chunks - 1);
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&](std::size_t lo, std::size_t hi) {
    detail::in_parallel_region() = true;
    try {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
    detail::in_parallel_region() = false;
  };
  for (std::size_t c = 1; c < chunks; ++c) {
    std::size_t lo = c * per;
    std::size_t hi = std::min(n, lo + per);
    if (lo >= hi) break;
    threads.emplace_back(run, lo, hi);
  }
  run(0, std::min(n, per));
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace voxrender
