#ifndef MIXEDVI_PARALLEL_HPP
#define MIXEDVI_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

namespace mixedvi {

/// Worker count: MIXEDVI_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
inline int thread_count() {
  if (const char* env = std::getenv("MIXEDVI_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// out[i] = fn(i) for i < count, evaluated on up to thread_count() threads.
/// Results are stored by index, so the output never depends on scheduling.
/// The first exception thrown by any task is rethrown after all threads join.
template <class Fn>
auto parallel_map(int count, Fn&& fn) -> std::vector<std::invoke_result_t<Fn&, int>> {
  using Result = std::invoke_result_t<Fn&, int>;
  std::vector<Result> out(static_cast<std::size_t>(std::max(count, 0)));
  const int workers = std::min(thread_count(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace mixedvi

#endif  // MIXEDVI_PARALLEL_HPP
