#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mf3d {

namespace detail {
inline std::atomic<std::size_t>& thread_override() {
  static std::atomic<std::size_t> n{0};
  return n;
}
}  // namespace detail

/// Worker thread cap: set_worker_threads() override, else MF3D_THREADS, else hardware concurrency.
inline std::size_t worker_threads() {
  if (const std::size_t n = detail::thread_override().load(); n > 0) return n;
  static const std::size_t from_env = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MF3D_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v > 0) return std::min<std::size_t>(hw, static_cast<std::size_t>(v));
      } catch (...) {
      }
    }
    return hw;
  }();
  return from_env;
}

inline void set_worker_threads(std::size_t n) { detail::thread_override().store(n); }

/// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each.
/// Chunk boundaries never change per-element arithmetic, so results are
/// identical for any thread count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t min_chunk, Fn&& fn) {
  if (n == 0) return;
  const std::size_t threads =
      std::min(worker_threads(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
  if (threads <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, t, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mf3d
