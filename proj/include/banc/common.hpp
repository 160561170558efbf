//
//  common.hpp — shared error handling, logging and parallel helpers.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace banc {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

template <typename... Args>
void require(bool cond, Args&&... args) {
  if (!cond) fail(std::forward<Args>(args)...);
}

// Verbosity from BANC_LOG: 0 = silent, 1 = warnings (default), 2 = info.
inline int log_level() {
  static const int level = [] {
    const char* env = std::getenv("BANC_LOG");
    return env ? std::atoi(env) : 1;
  }();
  return level;
}

template <typename... Args>
void log_warn(Args&&... args) {
  if (log_level() >= 1) {
    std::ostringstream os;
    (os << ... << args);
    std::cerr << "[banc] warning: " << os.str() << "\n";
  }
}

template <typename... Args>
void log_info(Args&&... args) {
  if (log_level() >= 2) {
    std::ostringstream os;
    (os << ... << args);
    std::cerr << "[banc] " << os.str() << "\n";
  }
}

// Worker count for parallel_for. BANC_THREADS overrides; result is stable
// for the lifetime of the process.
inline int num_threads() {
  static const int n = [] {
    const char* env = std::getenv("BANC_THREADS");
    if (env) return std::max(1, std::atoi(env));
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 4u));
  }();
  return n;
}

// Runs fn over [0, n) split into contiguous per-thread ranges. Each worker
// owns a disjoint slice, so results are bit-identical for any thread count
// as long as fn writes only inside its range.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  const int workers = num_threads();
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    fn(0, n);
    return;
  }
  const int used = static_cast<int>(std::min<int64_t>(workers, n));
  const int64_t chunk = (n + used - 1) / used;
  std::vector<std::thread> pool;
  pool.reserve(used - 1);
  for (int t = 1; t < used; ++t) {
    int64_t b = t * chunk;
    int64_t e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(fn, b, e);
  }
  fn(0, std::min<int64_t>(n, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace banc
