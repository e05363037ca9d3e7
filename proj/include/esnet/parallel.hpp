#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

#include "esnet/text.hpp"

namespace esnet {

// requested > 0 wins; otherwise ESNET_THREADS, otherwise 1.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ESNET_THREADS")) {
    if (const auto n = text::parse_int(env); n && *n > 0) return static_cast<int>(*n);
  }
  return 1;
}

// Runs fn(i) for i in [0, n) with interleaved work assignment. Each index
// writes only its own slot, so results do not depend on the thread count.
// The first failing index (in index order) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace esnet
