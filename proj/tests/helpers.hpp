#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "doctest.h"
#include "finr/compose.hpp"
#include "finr/rng.hpp"
#include "finr/tensor.hpp"

namespace testutil {

inline finr::DenseTensor random_tensor(finr::Rng& rng, std::vector<std::size_t> ext,
                                       double lo = -1.0, double hi = 1.0) {
  finr::DenseTensor t(std::move(ext));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Random factor set within the documented oracle bounds: up to 4 axes,
// extents 1..5, ranks 1..4, channels 1..3.
inline finr::FactorSet random_factor_set(finr::Rng& rng, finr::Mode mode) {
  using finr::Mode;
  finr::FactorSet fs;
  fs.mode = mode;
  const int d_lo = (mode == Mode::TT) ? 2 : 1;
  const int d = d_lo + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(5 - d_lo)));
  fs.channels = 1 + rng.next_below(3);
  std::vector<std::size_t> extents;
  for (int k = 0; k < d; ++k) extents.push_back(1 + rng.next_below(5));
  auto rank = [&] { return 1 + rng.next_below(4); };
  switch (mode) {
    case Mode::CP: {
      fs.ranks = {rank()};
      for (int k = 0; k < d; ++k)
        fs.factors.push_back(random_tensor(rng, {extents[static_cast<std::size_t>(k)], fs.ranks[0]}));
      fs.mix = random_tensor(rng, {fs.ranks[0], fs.channels});
      break;
    }
    case Mode::TT: {
      for (int k = 0; k + 1 < d; ++k) fs.ranks.push_back(rank());
      fs.factors.push_back(random_tensor(rng, {extents[0], fs.ranks[0]}));
      for (int k = 1; k + 1 < d; ++k)
        fs.factors.push_back(random_tensor(rng, {fs.ranks[static_cast<std::size_t>(k - 1)],
                                                 extents[static_cast<std::size_t>(k)],
                                                 fs.ranks[static_cast<std::size_t>(k)]}));
      fs.factors.push_back(random_tensor(rng, {extents[static_cast<std::size_t>(d - 1)], fs.ranks.back()}));
      fs.mix = random_tensor(rng, {fs.ranks.back(), fs.channels});
      break;
    }
    case Mode::TU: {
      std::vector<std::size_t> core_ext;
      for (int k = 0; k < d; ++k) {
        fs.ranks.push_back(rank());
        core_ext.push_back(fs.ranks.back());
        fs.factors.push_back(random_tensor(rng, {extents[static_cast<std::size_t>(k)], fs.ranks.back()}));
      }
      core_ext.push_back(fs.channels);
      fs.mix = random_tensor(rng, core_ext);
      break;
    }
  }
  return fs;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_rel_err(const finr::DenseTensor& a, const finr::DenseTensor& b) {
  REQUIRE(a.extents() == b.extents());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

// Central-difference gradient of a scalar function of a flat parameter
// vector; used to cross-check every analytic backward pass.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> theta, double h = 1e-6) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    const double step = h * std::max(1.0, std::abs(saved));
    theta[i] = saved + step;
    const double fp = f(theta);
    theta[i] = saved - step;
    const double fm = f(theta);
    theta[i] = saved;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

}  // namespace testutil
