#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace fleetchurn {

// Runs fn(i) for i in [0, n). Work is split into fixed-size blocks claimed by
// worker threads; each index writes only its own preallocated slots, so the
// result is identical for any thread count.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const int nthreads = std::max(1, threads);
  if (nthreads == 1 || n < 256) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  constexpr std::size_t kBlock = 256;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t begin = next.fetch_add(kBlock);
      if (begin >= n) return;
      const std::size_t end = std::min(begin + kBlock, n);
      for (std::size_t i = begin; i < end; ++i) fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

// Block-wise reduction with a fixed block size: partials are computed (possibly
// in parallel) per block and then combined in ascending block order, so the
// floating-point result does not depend on the thread count.
template <typename Acc>
void parallel_block_reduce(std::size_t n, int threads,
                           const std::function<void(std::size_t, std::size_t, Acc&)>& block_fn,
                           const std::function<void(Acc&)>& combine_in_order,
                           const std::function<Acc()>& make_acc) {
  constexpr std::size_t kBlock = 1024;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<Acc> partials;
  partials.reserve(nblocks);
  for (std::size_t b = 0; b < nblocks; ++b) partials.push_back(make_acc());
  parallel_for(nblocks, threads, [&](std::size_t b) {
    const std::size_t begin = b * kBlock;
    const std::size_t end = std::min(begin + kBlock, n);
    block_fn(begin, end, partials[b]);
  });
  for (std::size_t b = 0; b < nblocks; ++b) combine_in_order(partials[b]);
}

}  // namespace fleetchurn
