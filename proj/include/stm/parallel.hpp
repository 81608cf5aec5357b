#pragma once

// Deterministic data parallelism.  Work items are indexed; each item derives
// its own seed and writes only to its own slot, so results are identical for
// any thread count.  STM_THREADS caps the worker count.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace stm {

inline int thread_budget() {
  if (const char* env = std::getenv("STM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<int>(std::min<long>(v, 512));
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Executes body(i) for i in [0, n).  body must only touch state owned by
// index i (typically a preallocated result slot); any reduction happens
// afterwards in index order.
template <class Body>
void parallel_for(std::int64_t n, Body&& body) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::int64_t>(thread_budget(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = n * w / workers;
    const std::int64_t hi = n * (w + 1) / workers;
    pool.emplace_back([lo, hi, &body] {
      for (std::int64_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Deterministic parallel reduction.  [0, n) is cut into fixed-size blocks
// (the partition depends only on n and block_size, never on the worker
// count); each block is folded serially in index order and block results are
// combined serially in block order.  The float summation tree is therefore
// identical for every thread count.
template <class T, class MakeZero, class Fold, class Combine>
T parallel_block_reduce(std::int64_t n, std::int64_t block_size, MakeZero&& make_zero,
                        Fold&& fold, Combine&& combine) {
  T total = make_zero();
  if (n <= 0) return total;
  if (block_size < 1) block_size = 1;
  const std::int64_t blocks = (n + block_size - 1) / block_size;
  std::vector<T> partial(static_cast<std::size_t>(blocks), make_zero());
  parallel_for(blocks, [&](std::int64_t b) {
    const std::int64_t lo = b * block_size;
    const std::int64_t hi = std::min<std::int64_t>(lo + block_size, n);
    T& acc = partial[static_cast<std::size_t>(b)];
    for (std::int64_t i = lo; i < hi; ++i) fold(acc, i);
  });
  for (std::int64_t b = 0; b < blocks; ++b) combine(total, partial[static_cast<std::size_t>(b)]);
  return total;
}

}  // namespace stm
