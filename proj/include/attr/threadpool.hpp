#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace attr {

// Worker cap: ATTR_THREADS env var, else hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("ATTR_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Static chunked parallel loop; results are deterministic because each index
// writes only its own slot.
inline void parallel_for(int n, const std::function<void(int)>& fn, int max_workers = -1) {
  int workers = max_workers > 0 ? std::min(max_workers, worker_count()) : worker_count();
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace attr
