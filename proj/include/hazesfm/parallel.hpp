#pragma once

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hazesfm {

// Execution policy for internally data-parallel loops. All reductions in the
// library run over fixed-size blocks combined in index order, so results are
// bit-identical for any thread count.
struct ExecPolicy {
  int threads = 1;
};

inline int env_thread_default() {
  if (const char* env = std::getenv("HAZESFM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

// Runs fn(begin, end) over contiguous chunks of [0, n). With threads == 1 the
// call degenerates to a plain loop on the calling thread.
template <class Fn>
void parallel_chunks(long n, int threads, Fn&& fn) {
  if (n <= 0) return;
  threads = std::max(1, threads);
  const long chunk_count = std::min<long>(threads, n);
  if (chunk_count == 1) {
    fn(0L, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(chunk_count));
  const long per = (n + chunk_count - 1) / chunk_count;
  for (long c = 0; c < chunk_count; ++c) {
    const long lo = c * per;
    const long hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

namespace detail {
constexpr long kSumBlock = 4096;
}

// Deterministic sum of per_index(i) for i in [0, n): partial sums are formed
// per fixed-size block and combined in block order, independent of threads.
template <class Fn>
double blocked_sum(long n, int threads, Fn&& per_index) {
  if (n <= 0) return 0.0;
  const long blocks = (n + detail::kSumBlock - 1) / detail::kSumBlock;
  std::vector<double> partial(static_cast<size_t>(blocks), 0.0);
  parallel_chunks(blocks, threads, [&](long b0, long b1) {
    for (long b = b0; b < b1; ++b) {
      const long lo = b * detail::kSumBlock;
      const long hi = std::min(n, lo + detail::kSumBlock);
      double acc = 0.0;
      for (long i = lo; i < hi; ++i) acc += per_index(i);
      partial[static_cast<size_t>(b)] = acc;
    }
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace hazesfm
