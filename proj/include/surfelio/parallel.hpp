#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace surfelio {

/// Splits [0, n) into contiguous chunks, one per hardware thread, and runs
/// fn(begin, end) on each. Chunk boundaries depend only on n and the thread
/// count, so callers writing into per-index slots get deterministic output.
template <class Fn>
void parallel_for_chunks(std::size_t n, Fn&& fn, std::size_t min_chunk = 256) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t chunks = std::min(hw, std::max<std::size_t>(1, n / min_chunk));
  if (chunks <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t step = (n + chunks - 1) / chunks;
  std::vector<std::jthread> workers;
  workers.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t b = c * step;
    const std::size_t e = std::min(n, b + step);
    if (b >= e) break;
    workers.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, step));
}

}  // namespace surfelio
