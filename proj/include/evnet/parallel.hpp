#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace evnet {

// Runs fn(i) for i in [0, count) on up to `threads` workers. Every index is
// handled exactly once and must only write state owned by that index, so the
// outcome never depends on the worker count. The first exception (lowest
// index) is rethrown on the calling thread.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

// Pairwise reduction in a fixed tree shape: ((0+1)+(2+3))+... The summation
// order depends only on items.size().
template <typename T, typename Add>
T tree_reduce(std::vector<T> items, Add add) {
  if (items.empty()) return T{};
  while (items.size() > 1) {
    std::vector<T> next;
    next.reserve((items.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < items.size(); i += 2) {
      next.push_back(add(std::move(items[i]), std::move(items[i + 1])));
    }
    if (items.size() % 2 == 1) next.push_back(std::move(items.back()));
    items = std::move(next);
  }
  return std::move(items.front());
}

// Number of rows processed as one unit in batched forward/backward passes.
// Fixed so that floating-point reductions never depend on thread count.
inline constexpr std::size_t kRowChunk = 64;

inline std::size_t chunk_count(std::size_t rows) { return (rows + kRowChunk - 1) / kRowChunk; }

}  // namespace evnet
