#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace eplap::detail {

/// Runs fn(i) for i in [0, count). With threads <= 1 this is a plain loop;
/// otherwise a small worker pool pulls indices off an atomic counter. The
/// first exception thrown by any task is rethrown on the calling thread
/// after all workers join, so partial work never escapes silently.
inline void parallel_for(std::size_t count, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  if (threads <= 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const unsigned nworkers =
      static_cast<unsigned>(std::min<std::size_t>(threads, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(nworkers);
  for (unsigned w = 0; w < nworkers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace eplap::detail
