#include <cmath>

#include "doctest.h"
#include "finr/autodiff.hpp"
#include "helpers.hpp"

using namespace finr;
using ad::Param;
using ad::Tape;
using ad::Var;

TEST_CASE("product rule on scalars") {
  Param a("a", DenseTensor::from_data({1}, {2}));
  Param b("b", DenseTensor::from_data({1}, {3}));
  Tape t;
  Var loss = t.mul(t.leaf(a), t.leaf(b));
  CHECK(t.value(loss)[0] == 6.0);
  t.backward(loss);
  CHECK(a.grad[0] == 3.0);
  CHECK(b.grad[0] == 2.0);

  // A second sweep accumulates.
  t.backward(loss);
  CHECK(a.grad[0] == 6.0);
  CHECK(b.grad[0] == 4.0);
}

TEST_CASE("backward requires a scalar loss") {
  Param a("a", DenseTensor::from_data({2}, {1, 2}));
  Tape t;
  Var v = t.leaf(a);
  CHECK_THROWS_AS(t.backward(v), ShapeError);
}

TEST_CASE("branches that do not reach the loss contribute nothing") {
  Param a("a", DenseTensor::from_data({1}, {2}));
  Param b("b", DenseTensor::from_data({1}, {5}));
  Tape t;
  Var la = t.leaf(a);
  Var loss = t.mul(la, la);
  t.scale(t.leaf(b), 100);  // dead branch
  t.backward(loss);
  CHECK(a.grad[0] == 4.0);
  CHECK(b.grad[0] == 0.0);
}

TEST_CASE("adjoint of a scaled loss is the scaled adjoint") {
  Rng rng(77);
  Param w("w", testutil::random_tensor(rng, {4, 3}));
  const DenseTensor xv = testutil::random_tensor(rng, {2, 4});
  auto grads_for = [&](real alpha) {
    w.zero_grad();
    Tape t;
    Var x = t.constant(xv);
    Var loss = t.scale(t.mean(t.mul(t.matmul(x, t.leaf(w)), t.matmul(x, t.leaf(w)))), alpha);
    t.backward(loss);
    return w.grad;
  };
  const DenseTensor g1 = grads_for(1);
  const DenseTensor g3 = grads_for(3);
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(testutil::rel_err(3 * g1[i], g3[i]) < 1e-12);
}

TEST_CASE("every primitive matches finite differences") {
  Rng rng(101);
  Param w("w", testutil::random_tensor(rng, {3, 4}));
  Param b("b", testutil::random_tensor(rng, {4}));
  Param u("u", testutil::random_tensor(rng, {2, 4}, 0.5, 2.0));  // positive, feeds sqrt
  const DenseTensor x = testutil::random_tensor(rng, {2, 3});
  std::vector<Param*> params = {&w, &b, &u};

  Activation tanh_act;
  tanh_act.kind = Act::Tanh;

  auto build = [&](Tape& t) -> Var {
    Var xi = t.constant(x);
    Var z = t.add_rowvec(t.matmul(xi, t.leaf(w)), t.leaf(b));
    Var h = t.sigma(z, tanh_act, 0);
    Var prod = t.mul(h, t.leaf(u));
    Var guarded = t.sqrt(t.add_scalar(t.mul(prod, prod), 1e-12));
    Var dev = t.abs(t.add_scalar(t.sub(guarded, t.leaf(u)), 0.3));
    return t.mean(dev);
  };
  const ad::GradCheckReport rep = ad::grad_check(build, params, 1e-5);
  CHECK(rep.max_rel_err < 1e-6);
  CHECK(rep.probes == 12 + 4 + 8);
}

TEST_CASE("fused mean of squares equals its two-op spelling") {
  Rng rng(77);
  Param w("w", testutil::random_tensor(rng, {5, 3}));
  std::vector<Param*> params = {&w};

  // Same serial accumulation order, so values and gradients agree exactly.
  auto grad_of = [&](bool fused) {
    w.zero_grad();
    Tape t;
    Var h = t.scale(t.leaf(w), 1.7);
    Var loss = fused ? t.mean_sq(h) : t.mean(t.mul(h, h));
    const real v = t.value(loss)[0];
    t.backward(loss);
    return std::pair<real, DenseTensor>(v, w.grad);
  };
  const auto a = grad_of(true);
  const auto b = grad_of(false);
  CHECK(a.first == b.first);
  CHECK(max_abs_diff(a.second, b.second) == 0.0);

  auto build = [&](Tape& t) -> Var { return t.mean_sq(t.scale(t.leaf(w), 1.7)); };
  CHECK(ad::grad_check(build, params, 1e-5).max_rel_err < 1e-6);
}

TEST_CASE("structural ops match finite differences") {
  Rng rng(102);
  Param table("table", testutil::random_tensor(rng, {6, 3}));
  Param m("m", testutil::random_tensor(rng, {5, 2}));
  std::vector<Param*> params = {&table, &m};

  const std::vector<std::size_t> idx = {0, 3, 3, 5};
  const std::vector<std::size_t> i0 = {0, 1, 4};
  const std::vector<std::size_t> i1 = {1, 2, 5};
  const std::vector<real> w0 = {0.25, -1.0, 0.6};
  const std::vector<real> w1 = {0.75, 1.0, 0.4};
  const std::vector<std::size_t> pick = {1, 2, 4};

  auto build = [&](Tape& t) -> Var {
    Var g = t.gather_rows(t.leaf(table), idx);            // (4, 3)
    Var bl = t.blend_rows(t.leaf(table), i0, w0, i1, w1); // (3, 3)
    Var gm = t.gather_rows(t.leaf(m), pick);              // (3, 2)
    Var cat = t.concat_cols({bl, gm});                    // (3, 5)
    return t.add(t.mean(t.mul(cat, cat)), t.mean(g));
  };
  const ad::GradCheckReport rep = ad::grad_check(build, params, 1e-5);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("composition nodes match finite differences") {
  for (Mode mode : {Mode::CP, Mode::TT, Mode::TU}) {
    Rng rng(0x77 + static_cast<std::uint64_t>(mode));
    const int d = 3;
    const std::vector<std::size_t> ranks =
        (mode == Mode::CP) ? std::vector<std::size_t>{2}
                           : (mode == Mode::TT) ? std::vector<std::size_t>{2, 2}
                                                : std::vector<std::size_t>{2, 2, 2};
    const std::vector<std::size_t> widths = factor_widths(mode, d, ranks);
    const std::size_t channels = 2;
    std::vector<Param> mats;
    for (int k = 0; k < d; ++k)
      mats.emplace_back("f" + std::to_string(k), testutil::random_tensor(rng, {3, widths[static_cast<std::size_t>(k)]}));
    Param mix("mix", mode == Mode::TU ? testutil::random_tensor(rng, {2, 2, 2, channels})
                                      : testutil::random_tensor(rng, {ranks.back(), channels}));
    std::vector<Param*> params;
    for (auto& p : mats) params.push_back(&p);
    params.push_back(&mix);

    auto build_grid = [&](Tape& t) -> Var {
      std::vector<Var> mv;
      for (auto& p : mats) mv.push_back(t.leaf(p));
      Var out = t.compose_grid(mode, channels, ranks, mv, t.leaf(mix));
      return t.mean(t.mul(out, out));
    };
    CHECK(ad::grad_check(build_grid, params, 1e-5).max_rel_err < 1e-6);

    auto build_rows = [&](Tape& t) -> Var {
      std::vector<Var> rv;
      for (auto& p : mats) rv.push_back(t.leaf(p));
      Var out = t.compose_rows(mode, channels, ranks, rv, t.leaf(mix));
      return t.mean(t.mul(out, out));
    };
    CHECK(ad::grad_check(build_rows, params, 1e-5).max_rel_err < 1e-6);
  }
}

TEST_CASE("gradient accumulation over separate losses adds up") {
  Param a("a", DenseTensor::from_data({2}, {1.5, -0.5}));
  Tape t;
  Var la = t.leaf(a);
  Var l1 = t.mean(t.mul(la, la));
  Var l2 = t.sum(la);
  t.backward(l1);
  const DenseTensor g_after_first = a.grad;
  t.backward(l2);
  CHECK(a.grad[0] == doctest::Approx(g_after_first[0] + 1.0));
  CHECK(a.grad[1] == doctest::Approx(g_after_first[1] + 1.0));
}

TEST_CASE("deterministic replay produces identical gradients") {
  Rng rng(202);
  Param w("w", testutil::random_tensor(rng, {4, 4}));
  const DenseTensor x = testutil::random_tensor(rng, {3, 4});
  Activation sine;
  sine.kind = Act::Sine;
  sine.omega0 = 5;
  auto run = [&]() {
    w.zero_grad();
    Tape t;
    Var h = t.sigma(t.scale(t.matmul(t.constant(x), t.leaf(w)), 5), sine, 0);
    t.backward(t.mean(t.mul(h, h)));
    return w.grad;
  };
  const DenseTensor g1 = run();
  const DenseTensor g2 = run();
  CHECK(max_abs_diff(g1, g2) == 0.0);
}
