#ifndef STACKPRED_PARALLEL_HPP
#define STACKPRED_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace stackpred {

/// Runs body(i) for i in [0, count) on up to `threads` workers using a static
/// contiguous partition. Each index is evaluated exactly once and callers write
/// into preallocated per-index slots, so results never depend on scheduling.
/// The first exception thrown (lowest index wins) is rethrown on the caller.
template <typename Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }

  std::mutex guard;
  std::exception_ptr first_error;
  std::size_t first_index = count;

  auto run_chunk = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(guard);
        if (i < first_index) {
          first_index = i;
          first_error = std::current_exception();
        }
        return;
      }
    }
  };

  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(run_chunk, begin, end);
  }
  pool.clear();  // joins
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace stackpred

#endif  // STACKPRED_PARALLEL_HPP
