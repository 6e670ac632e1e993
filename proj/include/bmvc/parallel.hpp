#pragma once

#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace bmvc {

// Worker count from the BMVC_THREADS environment variable. Unset, 0 or 1
// means serial. 0 is also the reproducibility switch honored elsewhere
// (timings are zeroed in output files so reruns are byte-identical).
inline int thread_count() {
  const char* env = std::getenv("BMVC_THREADS");
  if (!env || !*env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v <= 1) return 1;
  const long hw = static_cast<long>(std::thread::hardware_concurrency());
  return static_cast<int>(hw > 0 && v > hw ? hw : v);
}

inline bool repro_mode() {
  const char* env = std::getenv("BMVC_THREADS");
  return env && std::string(env) == "0";
}

// Runs fn(begin, end) over static disjoint chunks of [0, n). Chunking depends
// only on n and the worker count, never on scheduling, so results that reduce
// per-chunk into disjoint storage are deterministic. Serial when workers == 1.
inline void parallel_for(int n, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  const int workers = thread_count() > n ? n : thread_count();
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = begin + chunk > n ? n : begin + chunk;
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace bmvc
