#pragma once

#include <functional>
#include <vector>

namespace finr {

struct TimingResult {
  double median_s = 0;  // per-call seconds
  double min_s = 0;
  int reps = 0;
  int inner = 1;  // body calls per timed sample (auto-scaled for short bodies)
};

// Median-of-reps wall time on the monotonic clock, after one discarded
// warm-up call. Bodies shorter than min_time_s are looped and the per-call
// time reported. A repetition count of 1 emits an instability warning on
// stderr and returns the single sample.
TimingResult time_callable(const std::function<void()>& body, int reps, double min_time_s = 0.02);

struct PowerFit {
  double slope = 0;
  double intercept = 0;  // log-space intercept
  double r2 = 0;
};

// Least-squares line through (log x, log y): the scaling exponent of y ~ x^p.
PowerFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace finr
