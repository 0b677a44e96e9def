#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace kgli {

/// Neumaier compensated summation. Order of accumulation is the caller's
/// order, so results are reproducible for a fixed traversal.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_sum(std::span<const double> values);

/// Least-squares slope of log(y) against log(x). Used for measured
/// convergence orders.
double log_log_slope(std::span<const double> x, std::span<const double> y);

/// Worker count taken from KGLI_THREADS (default 1).
unsigned thread_count();

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n and the thread count, so per-chunk reductions combined in
/// chunk order are deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 4096);

}  // namespace kgli
