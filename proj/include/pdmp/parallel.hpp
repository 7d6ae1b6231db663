#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pdmp {

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(chunk_index, begin, end) over [0, total) split into fixed-size
/// chunks. Chunk boundaries depend only on chunk_size, never on the thread
/// count, so per-chunk outputs reduced in chunk order give results that are
/// independent of scheduling.
template <typename Fn>
void for_each_chunk(std::uint64_t total, std::uint64_t chunk_size, unsigned threads, Fn&& fn) {
  if (total == 0) return;
  if (chunk_size == 0) chunk_size = 1;
  const std::uint64_t n_chunks = (total + chunk_size - 1) / chunk_size;
  threads = resolve_threads(threads);
  if (threads <= 1 || n_chunks == 1) {
    for (std::uint64_t c = 0; c < n_chunks; ++c)
      fn(c, c * chunk_size, std::min(total, (c + 1) * chunk_size));
    return;
  }

  std::atomic<std::uint64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::uint64_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        fn(c, c * chunk_size, std::min(total, (c + 1) * chunk_size));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n_workers = static_cast<unsigned>(std::min<std::uint64_t>(threads, n_chunks));
  pool.reserve(n_workers);
  for (unsigned t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace pdmp
