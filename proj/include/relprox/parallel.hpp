#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace relprox {

// Worker cap: min(RELPROX_THREADS if set, hardware_concurrency), at least 1.
inline std::size_t max_threads() {
  std::size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("RELPROX_THREADS")) {
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end != env && parsed > 0 && static_cast<std::size_t>(parsed) < hw) {
      hw = static_cast<std::size_t>(parsed);
    }
  }
  return hw;
}

// Runs fn(chunk_index, begin, end) over [0, count) split into fixed-size
// chunks. Chunk boundaries depend only on count and chunk_size, never on the
// thread count, so any reduction that accumulates per chunk and combines in
// chunk order is bit-identical for 1..n workers. Each chunk index is claimed
// exactly once.
inline void for_each_chunk(std::size_t count, std::size_t chunk_size,
                           const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  if (chunk_size == 0) chunk_size = 1;
  const std::size_t n_chunks = (count + chunk_size - 1) / chunk_size;
  const std::size_t workers = std::min(max_threads(), n_chunks);

  auto run_chunk = [&](std::size_t c) {
    const std::size_t lo = c * chunk_size;
    const std::size_t hi = std::min(lo + chunk_size, count);
    fn(c, lo, hi);
  };

  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t c = next.fetch_add(1);
        if (c >= n_chunks) return;
        run_chunk(c);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace relprox
