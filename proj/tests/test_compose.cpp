#include <vector>

#include "doctest.h"
#include "finr/compose.hpp"
#include "finr/rng.hpp"
#include "helpers.hpp"

using namespace finr;
using testutil::random_factor_set;
using testutil::random_tensor;

namespace {

FactorSet rank1_2d() {
  FactorSet fs;
  fs.mode = Mode::CP;
  fs.channels = 1;
  fs.ranks = {1};
  fs.factors.push_back(DenseTensor::from_data({2, 1}, {1, 2}));
  fs.factors.push_back(DenseTensor::from_data({2, 1}, {3, 4}));
  fs.mix = DenseTensor::from_data({1, 1}, {1});
  return fs;
}

std::vector<DenseTensor> point_rows(const FactorSet& fs, const std::vector<std::size_t>& ix) {
  std::vector<DenseTensor> rows;
  for (int k = 0; k < fs.d(); ++k) {
    const DenseTensor& f = fs.factors[static_cast<std::size_t>(k)];
    if (fs.mode == Mode::TT && k > 0 && k + 1 < fs.d()) {
      const std::size_t ra = f.extent(0), rb = f.extent(2);
      DenseTensor slice({ra, rb});
      for (std::size_t a = 0; a < ra; ++a)
        for (std::size_t b = 0; b < rb; ++b) slice.at(a, b) = f.at(a, ix[static_cast<std::size_t>(k)], b);
      rows.push_back(std::move(slice));
    } else {
      const std::size_t w = f.extent(1);
      DenseTensor row({w});
      for (std::size_t j = 0; j < w; ++j) row[j] = f.at(ix[static_cast<std::size_t>(k)], j);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("rank-1 composition is the outer product") {
  const DenseTensor out = compose(rank1_2d());
  REQUIRE(out.extents() == std::vector<std::size_t>{2, 2, 1});
  CHECK(out.at(0, 0, 0) == 3.0);
  CHECK(out.at(0, 1, 0) == 4.0);
  CHECK(out.at(1, 0, 0) == 6.0);
  CHECK(out.at(1, 1, 0) == 8.0);
  CHECK(testutil::max_rel_err(out, reference_compose(rank1_2d())) == 0.0);
}

TEST_CASE("composition is multilinear in each factor") {
  Rng rng(21);
  FactorSet fs = random_factor_set(rng, Mode::CP);
  const DenseTensor base = compose(fs);
  for (std::size_t i = 0; i < fs.factors[0].size(); ++i) fs.factors[0][i] *= 2.0;
  const DenseTensor scaled = compose(fs);
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(scaled[i] == doctest::Approx(2.0 * base[i]).epsilon(1e-12));
}

TEST_CASE("fast kernels match the brute-force oracle") {
  for (Mode mode : {Mode::CP, Mode::TT, Mode::TU}) {
    Rng rng(0x5eedull + static_cast<std::uint64_t>(mode));
    for (int trial = 0; trial < 12; ++trial) {
      const FactorSet fs = random_factor_set(rng, mode);
      const DenseTensor fast = compose(fs);
      const DenseTensor slow = reference_compose(fs);
      CHECK(testutil::max_rel_err(fast, slow) < 1e-12);
    }
  }
}

TEST_CASE("a two-axis chain equals cp with the same matrices") {
  Rng rng(31);
  FactorSet cp;
  cp.mode = Mode::CP;
  cp.channels = 2;
  cp.ranks = {3};
  cp.factors.push_back(random_tensor(rng, {4, 3}));
  cp.factors.push_back(random_tensor(rng, {5, 3}));
  cp.mix = random_tensor(rng, {3, 2});

  FactorSet tt = cp;
  tt.mode = Mode::TT;
  CHECK(testutil::max_rel_err(compose(tt), compose(cp)) < 1e-15);
}

TEST_CASE("an identity interior core passes the chain straight through") {
  // core[a, i, b] = (a == b): the middle axis contributes nothing.
  FactorSet fs;
  fs.mode = Mode::TT;
  fs.channels = 1;
  fs.ranks = {2, 2};
  Rng rng(32);
  fs.factors.push_back(random_tensor(rng, {3, 2}));
  DenseTensor core({2, 4, 2});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t a = 0; a < 2; ++a) core.at(a, i, a) = 1.0;
  fs.factors.push_back(core);
  fs.factors.push_back(random_tensor(rng, {3, 2}));
  fs.mix = random_tensor(rng, {2, 1});

  const DenseTensor out = compose(fs);
  CHECK(testutil::max_rel_err(out, reference_compose(fs)) < 1e-13);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 1; j < 4; ++j)
      for (std::size_t k = 0; k < 3; ++k)
        CHECK(out.at(i, j, k, std::size_t{0}) == doctest::Approx(out.at(i, std::size_t{0}, k, std::size_t{0})));
}

TEST_CASE("a superdiagonal tucker core reproduces cp") {
  Rng rng(33);
  FactorSet cp;
  cp.mode = Mode::CP;
  cp.channels = 2;
  cp.ranks = {3};
  for (std::size_t n : {3u, 4u, 2u}) cp.factors.push_back(random_tensor(rng, {n, 3}));
  cp.mix = random_tensor(rng, {3, 2});

  FactorSet tu;
  tu.mode = Mode::TU;
  tu.channels = 2;
  tu.ranks = {3, 3, 3};
  tu.factors = cp.factors;
  DenseTensor core({3, 3, 3, 2});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) core.at(r, r, r, c) = cp.mix.at(r, c);
  tu.mix = core;

  CHECK(testutil::max_rel_err(compose(tu), compose(cp)) < 1e-13);
}

TEST_CASE("point contraction matches the composed grid rows") {
  for (Mode mode : {Mode::CP, Mode::TT, Mode::TU}) {
    Rng rng(0xab1eull + static_cast<std::uint64_t>(mode));
    for (int trial = 0; trial < 6; ++trial) {
      const FactorSet fs = random_factor_set(rng, mode);
      const DenseTensor grid = compose(fs);
      std::vector<std::size_t> ix;
      for (int k = 0; k < fs.d(); ++k) ix.push_back(rng.next_below(fs.axis_extent(k)));
      const DenseTensor pt = contract_point(fs, point_rows(fs, ix));
      std::size_t flat = 0;
      for (int k = 0; k < fs.d(); ++k) flat = flat * fs.axis_extent(k) + ix[static_cast<std::size_t>(k)];
      for (std::size_t c = 0; c < fs.channels; ++c)
        CHECK(testutil::rel_err(pt[c], grid[flat * fs.channels + c]) < 1e-10);
    }
  }
}

TEST_CASE("validation rejects malformed factor sets") {
  FactorSet fs = rank1_2d();
  fs.mix = DenseTensor({2, 1});
  CHECK_THROWS_AS(fs.validate(), ShapeError);

  FactorSet tt;
  tt.mode = Mode::TT;
  tt.channels = 1;
  tt.ranks = {2, 3};
  Rng rng(40);
  tt.factors.push_back(random_tensor(rng, {3, 2}));
  tt.factors.push_back(random_tensor(rng, {2, 4, 2}));  // trailing bond should be 3
  tt.factors.push_back(random_tensor(rng, {3, 3}));
  tt.mix = random_tensor(rng, {3, 1});
  CHECK_THROWS_AS(tt.validate(), ShapeError);

  FactorSet tu = random_factor_set(rng, Mode::TU);
  tu.ranks[0] += 1;
  CHECK_THROWS_AS(tu.validate(), ShapeError);
}

namespace {

// Flatten mats + mix into one parameter vector for finite differencing.
struct FlatParams {
  std::vector<DenseTensor> mats;
  DenseTensor mix;

  std::vector<double> flatten() const {
    std::vector<double> v;
    for (const auto& m : mats) v.insert(v.end(), m.vec().begin(), m.vec().end());
    v.insert(v.end(), mix.vec().begin(), mix.vec().end());
    return v;
  }
  void unflatten(const std::vector<double>& v) {
    std::size_t off = 0;
    for (auto& m : mats) {
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
                v.begin() + static_cast<std::ptrdiff_t>(off + m.size()), m.vec().begin());
      off += m.size();
    }
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(off), v.end(), mix.vec().begin());
  }
};

}  // namespace

TEST_CASE("grid composition backward matches finite differences") {
  for (const int d : {2, 3}) {  // d = 2 exercises the GEMM fast path for cp
  for (Mode mode : {Mode::CP, Mode::TT, Mode::TU}) {
    Rng rng(0xfd00ull + static_cast<std::uint64_t>(mode) + std::uint64_t(16 * d));
    std::vector<std::size_t> ranks;
    if (mode == Mode::CP)
      ranks = {3};
    else if (mode == Mode::TT)
      ranks = (d == 2) ? std::vector<std::size_t>{2} : std::vector<std::size_t>{2, 3};
    else
      ranks = (d == 2) ? std::vector<std::size_t>{2, 3} : std::vector<std::size_t>{2, 3, 2};
    const std::vector<std::size_t> widths = factor_widths(mode, d, ranks);
    std::vector<std::size_t> extents = {3, 4, 2};
    extents.resize(std::size_t(d));
    const std::size_t channels = 2;

    FlatParams fp;
    for (int k = 0; k < d; ++k)
      fp.mats.push_back(random_tensor(rng, {extents[static_cast<std::size_t>(k)], widths[static_cast<std::size_t>(k)]}));
    if (mode == Mode::TU) {
      std::vector<std::size_t> core = ranks;
      core.push_back(channels);
      fp.mix = random_tensor(rng, core);
    } else {
      fp.mix = random_tensor(rng, {ranks.back(), channels});
    }
    std::vector<std::size_t> w_ext = extents;
    w_ext.push_back(channels);
    DenseTensor w = random_tensor(rng, w_ext);

    auto loss = [&](const std::vector<double>& theta) {
      FlatParams local = fp;
      local.unflatten(theta);
      const DenseTensor out = compose_grid(mode, channels, ranks, local.mats, local.mix);
      double s = 0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
      return s;
    };

    const ComposeGrads g = compose_grid_backward(mode, channels, ranks, fp.mats, fp.mix, w);
    std::vector<double> analytic;
    for (const auto& m : g.mats) analytic.insert(analytic.end(), m.vec().begin(), m.vec().end());
    analytic.insert(analytic.end(), g.mix.vec().begin(), g.mix.vec().end());

    const std::vector<double> fd = testutil::fd_gradient(loss, fp.flatten());
    REQUIRE(fd.size() == analytic.size());
    for (std::size_t i = 0; i < fd.size(); ++i)
      CHECK(testutil::rel_err(fd[i], analytic[i]) < 1e-6);
  }
  }
}

TEST_CASE("row composition matches grid values and its backward matches finite differences") {
  for (Mode mode : {Mode::CP, Mode::TT, Mode::TU}) {
    Rng rng(0xbeefull + static_cast<std::uint64_t>(mode));
    const int d = 3;
    std::vector<std::size_t> ranks;
    if (mode == Mode::CP)
      ranks = {2};
    else if (mode == Mode::TT)
      ranks = {2, 2};
    else
      ranks = {2, 2, 2};
    const std::vector<std::size_t> widths = factor_widths(mode, d, ranks);
    const std::vector<std::size_t> extents = {3, 3, 3};
    const std::size_t channels = 2;

    std::vector<DenseTensor> mats;
    for (int k = 0; k < d; ++k)
      mats.push_back(random_tensor(rng, {extents[static_cast<std::size_t>(k)], widths[static_cast<std::size_t>(k)]}));
    DenseTensor mix = (mode == Mode::TU) ? random_tensor(rng, {2, 2, 2, channels})
                                         : random_tensor(rng, {ranks.back(), channels});
    const DenseTensor grid = compose_grid(mode, channels, ranks, mats, mix);

    const std::size_t npts = 5;
    std::vector<std::vector<std::size_t>> picks;
    std::vector<DenseTensor> rows;
    for (int k = 0; k < d; ++k) rows.emplace_back(DenseTensor({npts, widths[static_cast<std::size_t>(k)]}));
    for (std::size_t p = 0; p < npts; ++p) {
      std::vector<std::size_t> ix;
      for (int k = 0; k < d; ++k) {
        const std::size_t i = rng.next_below(extents[static_cast<std::size_t>(k)]);
        ix.push_back(i);
        for (std::size_t j = 0; j < widths[static_cast<std::size_t>(k)]; ++j)
          rows[static_cast<std::size_t>(k)].at(p, j) = mats[static_cast<std::size_t>(k)].at(i, j);
      }
      picks.push_back(ix);
    }

    const DenseTensor out = compose_rows(mode, channels, ranks, rows, mix);
    for (std::size_t p = 0; p < npts; ++p) {
      std::size_t flat = 0;
      for (int k = 0; k < d; ++k) flat = flat * extents[static_cast<std::size_t>(k)] + picks[p][static_cast<std::size_t>(k)];
      for (std::size_t c = 0; c < channels; ++c)
        CHECK(testutil::rel_err(out.at(p, c), grid[flat * channels + c]) < 1e-12);
    }

    // Backward against finite differences over rows and mix.
    DenseTensor w = random_tensor(rng, {npts, channels});
    FlatParams fp;
    fp.mats = rows;
    fp.mix = mix;
    auto loss = [&](const std::vector<double>& theta) {
      FlatParams local = fp;
      local.unflatten(theta);
      const DenseTensor o = compose_rows(mode, channels, ranks, local.mats, local.mix);
      double s = 0;
      for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * w[i];
      return s;
    };
    const ComposeGrads g = compose_rows_backward(mode, channels, ranks, rows, mix, w);
    std::vector<double> analytic;
    for (const auto& m : g.mats) analytic.insert(analytic.end(), m.vec().begin(), m.vec().end());
    analytic.insert(analytic.end(), g.mix.vec().begin(), g.mix.vec().end());
    const std::vector<double> fd = testutil::fd_gradient(loss, fp.flatten());
    REQUIRE(fd.size() == analytic.size());
    for (std::size_t i = 0; i < fd.size(); ++i)
      CHECK(testutil::rel_err(fd[i], analytic[i]) < 1e-6);
  }
}

TEST_CASE("network-layout grid composition agrees with the factor-set kernels") {
  Rng rng(55);
  // Exercise the interior relayout: d = 4 chain.
  const std::vector<std::size_t> ranks = {2, 3, 2};
  const std::vector<std::size_t> extents = {3, 2, 4, 3};
  const std::vector<std::size_t> widths = factor_widths(Mode::TT, 4, ranks);
  std::vector<DenseTensor> mats;
  for (int k = 0; k < 4; ++k)
    mats.push_back(random_tensor(rng, {extents[static_cast<std::size_t>(k)], widths[static_cast<std::size_t>(k)]}));
  const DenseTensor mix = random_tensor(rng, {ranks.back(), 2});
  const FactorSet fs = factors_from_mats(Mode::TT, 2, ranks, mats, mix);
  CHECK(testutil::max_rel_err(compose_grid(Mode::TT, 2, ranks, mats, mix), reference_compose(fs)) < 1e-12);
}
