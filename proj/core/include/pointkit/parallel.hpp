#pragma once

#include <cstdint>
#include <thread>
#include <vector>

#include "pointkit/geom.hpp"

namespace pointkit {

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each element is
/// written by exactly one chunk, so results are bit-identical to the
/// sequential order for any thread count.
template <typename Fn>
void parallel_for(Index n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2048) {
    fn(Index{0}, n);
    return;
  }
  const int workers = static_cast<int>(std::min<Index>(threads, n));
  const Index chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers) - 1);
  for (int t = 1; t < workers; ++t) {
    const Index b = t * chunk;
    const Index e = std::min<Index>(b + chunk, n);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(Index{0}, std::min<Index>(chunk, n));
  for (auto& th : pool) th.join();
}

}  // namespace pointkit
