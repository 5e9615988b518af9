#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <iostream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tps {

using Rng = std::mt19937_64;

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad experiment configuration (CLI exit code 2).
class config_error : public error {
 public:
  using error::error;
};

// A Monte Carlo run collapsed: all weights zero, impossible observation,
// leaf target not integrable, ... (CLI exit code 3).
class degenerate_error : public error {
 public:
  using error::error;
};

// Operation requested on a model that cannot support it.
class unsupported_error : public error {
 public:
  using error::error;
};

inline void warn(const std::string& msg) {
  std::cerr << "[tps] warning: " << msg << '\n';
}

// splitmix64 finaliser; used to derive substreams from one master seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// RNG substream addressed by up to three tags. The mapping is pure, so the
// stream a consumer sees does not depend on evaluation order or thread
// schedule.
inline Rng make_stream(std::uint64_t seed, std::uint64_t a = 0,
                       std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix64(seed);
  s = mix64(s ^ mix64(a + 0x100000001b3ULL));
  s = mix64(s ^ mix64(b + 0xcbf29ce484222325ULL));
  s = mix64(s ^ mix64(c + 0x9ae16a3b2f90404fULL));
  return Rng(s);
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n) on `threads` workers. Each index must write
// only its own outputs; the first exception thrown is re-raised on the
// caller's thread.
template <typename Fn>
void parallel_for_index(std::size_t n, int threads, Fn&& fn) {
  threads = resolve_threads(threads);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr eptr;
  std::mutex eptr_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(eptr_mutex);
        if (!failed.exchange(true)) eptr = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = static_cast<int>(std::min<std::size_t>(threads, n));
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (eptr) std::rethrow_exception(eptr);
}

// Maps fn over a fixed grid of chunks of [0, n) and returns the per-chunk
// results in chunk order. The chunk grid does not depend on the thread
// count, so any reduction over the returned vector is bitwise reproducible
// for every thread count.
template <typename Partial, typename Fn>
std::vector<Partial> parallel_map_chunks(std::size_t n, int threads, Fn&& fn) {
  constexpr std::size_t kChunks = 64;
  const std::size_t chunks = std::min<std::size_t>(kChunks, std::max<std::size_t>(n, 1));
  std::vector<Partial> out(chunks);
  parallel_for_index(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * n / chunks;
    const std::size_t end = (c + 1) * n / chunks;
    out[c] = fn(begin, end);
  });
  return out;
}

}  // namespace tps
