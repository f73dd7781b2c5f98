#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <random>
#include <thread>
#include <vector>

namespace mgpd {

// Independent stream k derived from a base seed; identical for any worker count.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t k) {
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(k),
                   static_cast<std::uint32_t>(k >> 32), 0x6d677064u};
  return std::mt19937_64(ss);
}

// Runs fn(i) for i in [0, n) over `threads` workers, each taking a contiguous range.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min(threads, n));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errs(workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
      const int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace mgpd
