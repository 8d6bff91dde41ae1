#include "finr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>

#include "finr/errors.hpp"

namespace finr {

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

TimingResult time_callable(const std::function<void()>& body, int reps, double min_time_s) {
  if (reps < 1) throw ConfigError("timing needs at least one repetition");
  if (reps == 1)
    std::cerr << "warning: single-repetition timing; medians are unstable, use reps >= 5\n";

  // Warm-up, also used to size the inner loop for very short bodies.
  const double w0 = now_s();
  body();
  const double warm = std::max(now_s() - w0, 1e-9);
  int inner = 1;
  if (warm < min_time_s)
    inner = static_cast<int>(std::min(1e6, std::ceil(min_time_s / warm)));

  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_s();
    for (int i = 0; i < inner; ++i) body();
    samples.push_back((now_s() - t0) / inner);
  }
  std::sort(samples.begin(), samples.end());
  TimingResult out;
  out.reps = reps;
  out.inner = inner;
  out.min_s = samples.front();
  const std::size_t mid = samples.size() / 2;
  out.median_s = samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
  return out;
}

PowerFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw ShapeError("log-log fit needs matching lists with at least two points");
  std::vector<double> lx(xs.size()), ly(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] <= 0 || ys[i] <= 0) throw DomainError("log-log fit needs positive data");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  const double n = double(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0) throw DomainError("log-log fit needs at least two distinct x values");
  PowerFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ly[i] - (f.intercept + f.slope * lx[i]);
    ss_res += e * e;
  }
  f.r2 = syy == 0 ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

}  // namespace finr
