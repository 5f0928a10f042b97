#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ctrsq {

inline constexpr std::size_t default_block_size = 64;

/// Runs fn(begin, end) over fixed-size blocks of [0, n) on up to `threads`
/// workers and returns the block results in block order, so any reduction
/// over them is independent of the thread count. The first exception (by
/// block index) is rethrown after all workers stop.
template <class R, class F>
std::vector<R> map_blocks(std::size_t n, unsigned threads, F&& fn,
                          std::size_t block = default_block_size) {
  const std::size_t blocks = (n + block - 1) / block;
  std::vector<R> out(blocks);
  std::vector<std::exception_ptr> errors(blocks);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= blocks || failed.load()) return;
      try {
        out[b] = fn(b * block, std::min(n, (b + 1) * block));
      } catch (...) {
        errors[b] = std::current_exception();
        failed.store(true);
      }
    }
  };

  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(blocks, 1)));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Running sums for mean and standard error.
struct Moments {
  double count = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double v) {
    count += 1.0;
    sum += v;
    sum_sq += v * v;
  }
  void merge(const Moments& o) {
    count += o.count;
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
  double mean() const { return count > 0.0 ? sum / count : 0.0; }
  double population_variance() const {
    if (count <= 0.0) return 0.0;
    const double m = mean();
    return std::max(0.0, sum_sq / count - m * m);
  }
  double sample_variance() const {
    return count > 1.0 ? population_variance() * count / (count - 1.0) : 0.0;
  }
  double standard_error() const { return count > 1.0 ? std::sqrt(sample_variance() / count) : 0.0; }
};

}  // namespace ctrsq
