#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace metarange {

namespace detail {
inline std::atomic<int>& thread_count_storage() {
  static std::atomic<int> count{1};
  return count;
}
inline thread_local bool inside_parallel_region = false;
}  // namespace detail

inline void set_thread_count(int n) { detail::thread_count_storage() = n < 1 ? 1 : n; }
inline int thread_count() { return detail::thread_count_storage().load(); }

/// Runs f(i) for i in [0, n). Work is split by index so each iteration owns
/// its output slot; callers must make f(i) write only to position i. Nested
/// calls run serially, which keeps results identical for any thread count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const int threads = thread_count();
  if (n == 0) return;
  if (threads <= 1 || n == 1 || detail::inside_parallel_region) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      detail::inside_parallel_region = true;
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
      detail::inside_parallel_region = false;
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace metarange
