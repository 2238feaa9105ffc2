#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace msan {

// Worker cap shared by all kernels. Work is split over independent outputs
// only, so results never depend on the cap.
inline std::atomic<int> &thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}

inline void set_threads(int n) { thread_cap().store(std::max(1, n)); }
inline int threads() { return thread_cap().load(); }

// Calls fn(i) for i in [0, count). Each index must write disjoint memory.
template <typename Fn> void parallel_for(std::size_t count, Fn &&fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads()), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += workers)
        fn(i);
    });
  }
  for (auto &th : pool)
    th.join();
}

} // namespace msan
