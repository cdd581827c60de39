#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace newscap {

/// Worker count: NEWSCAP_THREADS when set (>= 1), else the hardware
/// concurrency; never more than `cap` when cap > 0.
inline std::size_t worker_count(std::size_t cap = 0) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("NEWSCAP_THREADS")) {
    try {
      n = std::max<long>(1, std::stol(env));
    } catch (const std::exception&) {
    }
  }
  return cap ? std::min(n, cap) : n;
}

/// Runs fn(i) for i in [0, n) on up to `threads` threads with a static
/// interleaved partition. Results must be written to per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace newscap
