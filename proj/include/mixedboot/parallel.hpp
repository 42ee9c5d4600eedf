#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace mixedboot {

// Thread count from MIXEDBOOT_THREADS, or `fallback` when unset or invalid.
inline unsigned threads_from_env(unsigned fallback = 1) {
  const char* v = std::getenv("MIXEDBOOT_THREADS");
  if (v == nullptr) return fallback;
  try {
    const long n = std::stol(v);
    return n >= 1 ? static_cast<unsigned>(n) : fallback;
  } catch (...) {
    return fallback;
  }
}

// Runs fn(k) for k in [0, n) on up to `threads` workers. Index k is owned
// by exactly one worker and results are expected to land in slot k, so the
// outcome does not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < n; k += workers) fn(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace mixedboot
