#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace driftlab {

inline std::size_t default_workers() {
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs f(0) .. f(n-1) on at most `workers` threads (0 = hardware
/// concurrency) and returns the results in index order. If jobs throw, the
/// exception of the lowest failing index is rethrown after all threads join,
/// so the error does not depend on scheduling.
template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, std::size_t workers, F f) {
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errors(n);
  if (workers == 0) workers = default_workers();
  workers = std::min(workers, n);

  std::atomic<std::size_t> next{0};
  auto drain = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    drain();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(drain);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace driftlab
