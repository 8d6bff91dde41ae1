#include <cmath>

#include "doctest.h"
#include "finr/backends.hpp"
#include "helpers.hpp"

using namespace finr;

namespace {

Activation make_act(Act kind, real omega0 = 30, real s0 = 10, real bias_k = 1) {
  Activation a;
  a.kind = kind;
  a.omega0 = omega0;
  a.s0 = s0;
  a.bias_k = bias_k;
  return a;
}

}  // namespace

TEST_CASE("activation derivative ladder matches finite differences") {
  struct Probe {
    Activation act;
    real lo, hi;
  };
  const std::vector<Probe> probes = {
      {make_act(Act::Relu), 0.15, 2.0},   // stay off the kink
      {make_act(Act::Tanh), -2.0, 2.0},
      {make_act(Act::Sine), -3.0, 3.0},
      {make_act(Act::Gabor, 30, 10), -0.3, 0.3},
      {make_act(Act::Finer, 7), 0.1, 1.5},
      {make_act(Act::Finer, 7), -1.5, -0.1},
  };
  const real h = 1e-6;
  for (const Probe& pr : probes) {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
      const real z = rng.uniform(pr.lo, pr.hi);
      for (int k = 0; k < 3; ++k) {
        const real fd = (act_eval(pr.act, z + h, k) - act_eval(pr.act, z - h, k)) / (2 * h);
        const real an = act_eval(pr.act, z, k + 1);
        CHECK(testutil::rel_err(fd, an) < 2e-5);
      }
    }
  }
  CHECK_THROWS_AS(act_eval(make_act(Act::Tanh), 0.0, 4), CapabilityError);
}

TEST_CASE("relu derivative takes the zero branch at the kink") {
  const Activation a = make_act(Act::Relu);
  CHECK(act_eval(a, 0.0, 0) == 0.0);
  CHECK(act_eval(a, 0.0, 1) == 0.0);
  CHECK(act_eval(a, 1e-12, 1) == 1.0);
}

TEST_CASE("initialization draws respect the documented bounds") {
  SubNetworkSpec spec;
  spec.hidden_layers = 2;
  spec.width = 32;
  spec.out_width = 4;

  SUBCASE("glorot for relu") {
    spec.activation = make_act(Act::Relu);
    Rng rng(1);
    AxisNet net = make_axis_net(spec, -1, 1, "ax", rng);
    const real b0 = std::sqrt(6.0 / (1 + 32));
    const real b1 = std::sqrt(6.0 / (32 + 32));
    real m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < net.weights[0].value.size(); ++i)
      m0 = std::max(m0, std::abs(net.weights[0].value[i]));
    for (std::size_t i = 0; i < net.weights[1].value.size(); ++i)
      m1 = std::max(m1, std::abs(net.weights[1].value[i]));
    CHECK(m0 <= b0);
    CHECK(m0 > 0.5 * b0);  // draws actually fill the range
    CHECK(m1 <= b1);
    for (std::size_t i = 0; i < net.biases[0].value.size(); ++i)
      CHECK(net.biases[0].value[i] == 0.0);
  }

  SUBCASE("frequency-scaled for sine, first layer tighter") {
    spec.activation = make_act(Act::Sine, 30);
    Rng rng(2);
    AxisNet net = make_axis_net(spec, -1, 1, "ax", rng);
    real m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < net.weights[0].value.size(); ++i)
      m0 = std::max(m0, std::abs(net.weights[0].value[i]));
    for (std::size_t i = 0; i < net.weights[1].value.size(); ++i)
      m1 = std::max(m1, std::abs(net.weights[1].value[i]));
    CHECK(m0 <= 1.0 / 1);
    CHECK(m1 <= std::sqrt(6.0 / 32) / 30);
  }

  SUBCASE("finer adds a wide first-layer bias") {
    spec.activation = make_act(Act::Finer, 7, 10, 0.75);
    Rng rng(3);
    AxisNet net = make_axis_net(spec, -1, 1, "ax", rng);
    real bmax = 0;
    bool nonzero = false;
    for (std::size_t i = 0; i < net.biases[0].value.size(); ++i) {
      bmax = std::max(bmax, std::abs(net.biases[0].value[i]));
      nonzero = nonzero || net.biases[0].value[i] != 0;
    }
    CHECK(nonzero);
    CHECK(bmax <= 0.75);
    for (std::size_t i = 0; i < net.biases[1].value.size(); ++i)
      CHECK(net.biases[1].value[i] == 0.0);
  }
}

TEST_CASE("first-layer preactivation variance tracks the init law") {
  // z_j = sum_i w_ij x_i with w ~ U[-b, b]: Var(z_j) = fan_in * b^2/3 * E[x^2].
  SubNetworkSpec spec;
  spec.encoding.kind = EncodingSpec::Kind::Fourier;
  spec.encoding.levels = 3;
  spec.hidden_layers = 1;
  spec.width = 256;
  spec.out_width = 1;
  spec.activation = make_act(Act::Relu);

  const std::size_t p = 512;
  Rng xr(42);
  std::vector<real> xs(p);
  for (auto& x : xs) x = xr.uniform(-1, 1);

  Rng rng(7);
  AxisNet net = make_axis_net(spec, -1, 1, "ax", rng);
  ad::Tape t;
  // Reconstruct the layer input to measure its second moment.
  AxisJets out = forward_axis(t, net, xs, 0);
  (void)out;
  const std::size_t fan_in = static_cast<std::size_t>(spec.encoding.out_dim());
  const real bound = std::sqrt(6.0 / (static_cast<real>(fan_in) + 256));

  // Feature second moment for the fourier encoding: E[sin^2] = E[cos^2] = 1/2
  // over a full period; measure it instead of assuming, then compare the
  // empirical preactivation variance against fan_in * bound^2 / 3 * ex2.
  real ex2 = 0;
  {
    std::size_t cnt = 0;
    for (real x : xs)
      for (int l = 0; l < 3; ++l) {
        const real f = std::ldexp(3.14159265358979323846, l) * x;
        ex2 += std::sin(f) * std::sin(f) + std::cos(f) * std::cos(f);
        cnt += 2;
      }
    ex2 /= static_cast<real>(cnt);
  }
  const real predicted = static_cast<real>(fan_in) * bound * bound / 3 * ex2;

  // Recompute preactivations directly from the drawn weights.
  real var = 0;
  std::size_t cnt = 0;
  for (real x : xs) {
    for (std::size_t j = 0; j < 256; ++j) {
      real z = 0;
      for (std::size_t i = 0; i < fan_in; ++i) {
        const int l = static_cast<int>(i / 2);
        const real f = std::ldexp(3.14159265358979323846, l) * x;
        const real feat = (i % 2 == 0) ? std::sin(f) : std::cos(f);
        z += feat * net.weights[0].value.at(i, j);
      }
      var += z * z;
      ++cnt;
    }
  }
  var /= static_cast<real>(cnt);
  CHECK(var == doctest::Approx(predicted).epsilon(0.1));
}

TEST_CASE("jet channels match finite differences of the forward pass") {
  struct Combo {
    Activation act;
    EncodingSpec::Kind enc;
    int order;
  };
  const std::vector<Combo> combos = {
      {make_act(Act::Tanh), EncodingSpec::Kind::None, 2},
      {make_act(Act::Relu), EncodingSpec::Kind::Fourier, 2},
      {make_act(Act::Sine, 11), EncodingSpec::Kind::None, 2},
      {make_act(Act::Gabor, 9, 3), EncodingSpec::Kind::None, 2},
      {make_act(Act::Finer, 5), EncodingSpec::Kind::Fourier, 2},
      {make_act(Act::Tanh), EncodingSpec::Kind::FeatureGrid, 1},
  };
  for (const Combo& c : combos) {
    SubNetworkSpec spec;
    spec.encoding.kind = c.enc;
    spec.encoding.levels = (c.enc == EncodingSpec::Kind::FeatureGrid) ? 3 : 2;
    spec.hidden_layers = 2;
    spec.width = 16;
    spec.out_width = 3;
    spec.activation = c.act;
    Rng rng(500 + static_cast<std::uint64_t>(c.act.kind));
    AxisNet net = make_axis_net(spec, -2, 3, "ax", rng);  // non-trivial normalization

    std::vector<real> xs;
    Rng xr(7);
    for (int i = 0; i < 9; ++i) xs.push_back(xr.uniform(-1.8, 2.8));

    auto value_at = [&](const std::vector<real>& pts, int deriv) {
      ad::Tape t;
      AxisJets j = forward_axis(t, net, pts, deriv > 0 ? deriv : 0);
      return t.value(deriv == 0 ? j.value : (deriv == 1 ? j.d1 : j.d2));
    };

    const real h = 1e-6;
    const DenseTensor d1 = value_at(xs, 1);
    std::vector<real> xp = xs, xm = xs;
    for (auto& x : xp) x += h;
    for (auto& x : xm) x -= h;
    const DenseTensor vp = value_at(xp, 0);
    const DenseTensor vm = value_at(xm, 0);
    for (std::size_t i = 0; i < d1.size(); ++i) {
      const real fd = (vp[i] - vm[i]) / (2 * h);
      CHECK(testutil::rel_err(fd, d1[i]) < 1e-4);
    }

    if (c.order >= 2) {
      const DenseTensor d2 = value_at(xs, 2);
      const DenseTensor dp = value_at(xp, 1);
      const DenseTensor dm = value_at(xm, 1);
      for (std::size_t i = 0; i < d2.size(); ++i) {
        const real fd = (dp[i] - dm[i]) / (2 * h);
        CHECK(testutil::rel_err(fd, d2[i]) < 1e-4);
      }
    }
  }
}

TEST_CASE("feature grid reproduces stored rows exactly at the knots") {
  SubNetworkSpec spec;
  spec.encoding.kind = EncodingSpec::Kind::FeatureGrid;
  spec.encoding.levels = 1;
  spec.encoding.features = 3;
  spec.encoding.base_res = 5;
  spec.hidden_layers = 0;
  spec.out_width = 3;
  spec.activation = make_act(Act::Relu);
  Rng rng(9);
  AxisNet net = make_axis_net(spec, 0, 1, "ax", rng);
  // Identity head: the output is the raw feature vector.
  net.weights.back().value.fill(0);
  for (std::size_t i = 0; i < 3; ++i) net.weights.back().value.at(i, i) = 1.0;
  net.biases.back().value.fill(0);

  std::vector<real> knots;
  for (int i = 0; i < 5; ++i) knots.push_back(static_cast<real>(i) / 4);
  ad::Tape t;
  AxisJets j = forward_axis(t, net, knots, 0);
  const DenseTensor& out = t.value(j.value);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t f = 0; f < 3; ++f)
      CHECK(out.at(i, f) == doctest::Approx(net.tables[0].value.at(i, f)).epsilon(1e-14));
}

TEST_CASE("sine runs the first-layer frequency scale only once") {
  SubNetworkSpec spec;
  spec.hidden_layers = 1;
  spec.width = 1;
  spec.out_width = 1;
  spec.activation = make_act(Act::Sine, 7);
  Rng rng(10);
  AxisNet net = make_axis_net(spec, -1, 1, "ax", rng);
  net.weights[0].value[0] = 0.5;
  net.biases[0].value[0] = 0.25;
  net.weights[1].value[0] = 2.0;
  net.biases[1].value[0] = -0.125;

  const real x = 0.3;
  ad::Tape t;
  std::vector<real> xs = {x};
  AxisJets j = forward_axis(t, net, xs, 2);
  const real z = 7.0 * (0.5 * x + 0.25);
  CHECK(t.value(j.value)[0] == doctest::Approx(2.0 * std::sin(z) - 0.125).epsilon(1e-14));
  CHECK(t.value(j.d1)[0] == doctest::Approx(2.0 * std::cos(z) * 7.0 * 0.5).epsilon(1e-14));
  CHECK(t.value(j.d2)[0] == doctest::Approx(-2.0 * std::sin(z) * 49.0 * 0.25).epsilon(1e-12));
}

TEST_CASE("parameter gradients flow through jets") {
  SubNetworkSpec spec;
  spec.hidden_layers = 2;
  spec.width = 8;
  spec.out_width = 2;
  spec.activation = make_act(Act::Sine, 6);
  Rng rng(11);
  AxisNet net = make_axis_net(spec, -1, 1, "ax", rng);
  std::vector<ad::Param*> params;
  net.collect_params(params);

  std::vector<real> xs = {-0.7, -0.1, 0.4, 0.9};
  auto build = [&](ad::Tape& t) -> ad::Var {
    AxisJets j = forward_axis(t, net, xs, 2);
    // Loss touches all three jet channels.
    ad::Var a = t.mean(t.mul(j.value, j.value));
    ad::Var b = t.mean(t.mul(j.d1, j.d1));
    ad::Var c = t.mean(t.abs(j.d2));
    return t.add(a, t.add(b, c));
  };
  CHECK(ad::grad_check(build, params, 1e-5).max_rel_err < 1e-5);
}

TEST_CASE("spec validation rejects nonsense") {
  SubNetworkSpec spec;
  spec.out_width = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.out_width = 2;
  spec.encoding.kind = EncodingSpec::Kind::FeatureGrid;
  spec.encoding.base_res = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(encoding_from_string("hash"), ConfigError);
  CHECK_THROWS_AS(act_from_string("gelu"), ConfigError);
}
