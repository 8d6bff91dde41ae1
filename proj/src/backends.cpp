#include "finr/backends.hpp"

#include <cmath>
#include <numbers>

#include "finr/errors.hpp"

namespace finr {

int EncodingSpec::out_dim() const {
  switch (kind) {
    case Kind::None: return 1;
    case Kind::Fourier: return 2 * levels;
    case Kind::FeatureGrid: return features * levels;
  }
  return 1;
}

int EncodingSpec::level_res(int level) const {
  real r = static_cast<real>(base_res);
  for (int l = 0; l < level; ++l) r *= growth;
  return static_cast<int>(std::lround(r));
}

void EncodingSpec::validate() const {
  if (kind == Kind::None) return;
  if (levels < 1) throw ConfigError("encoding needs at least one level");
  if (kind == Kind::FeatureGrid) {
    if (features < 1) throw ConfigError("feature grid needs at least one feature per level");
    if (base_res < 2) throw ConfigError("feature grid needs at least two knots per level");
    if (growth <= 0) throw ConfigError("feature grid growth must be positive");
  }
}

EncodingSpec::Kind encoding_from_string(const std::string& s) {
  if (s == "none") return EncodingSpec::Kind::None;
  if (s == "fourier") return EncodingSpec::Kind::Fourier;
  if (s == "featuregrid") return EncodingSpec::Kind::FeatureGrid;
  throw ConfigError("unknown encoding '" + s + "' (expected none, fourier, or featuregrid)");
}

const char* encoding_name(EncodingSpec::Kind k) {
  switch (k) {
    case EncodingSpec::Kind::None: return "none";
    case EncodingSpec::Kind::Fourier: return "fourier";
    case EncodingSpec::Kind::FeatureGrid: return "featuregrid";
  }
  return "?";
}

void SubNetworkSpec::validate() const {
  encoding.validate();
  if (hidden_layers < 0) throw ConfigError("hidden layer count cannot be negative");
  if (hidden_layers > 0 && width < 1) throw ConfigError("hidden width must be positive");
  if (out_width < 1) throw ConfigError("sub-network output width must be positive");
}

void AxisNet::collect_params(std::vector<ad::Param*>& out) {
  for (auto& t : tables) out.push_back(&t);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
}

namespace {

DenseTensor uniform_tensor(Rng& rng, std::vector<std::size_t> ext, real bound) {
  DenseTensor t(std::move(ext));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

bool sine_family(Act a) { return a == Act::Sine || a == Act::Gabor || a == Act::Finer; }

real weight_bound(const Activation& act, std::size_t fan_in, std::size_t fan_out, bool first) {
  if (sine_family(act.kind)) {
    if (first) return real(1) / static_cast<real>(fan_in);
    return std::sqrt(real(6) / static_cast<real>(fan_in)) / act.omega0;
  }
  (void)first;
  return std::sqrt(real(6) / static_cast<real>(fan_in + fan_out));
}

}  // namespace

AxisNet make_axis_net(const SubNetworkSpec& spec, real dom_min, real dom_max,
                      const std::string& name_prefix, Rng& rng) {
  spec.validate();
  if (!(dom_max > dom_min)) throw ConfigError("axis domain must have positive extent");
  AxisNet net;
  net.spec = spec;
  net.dom_min = dom_min;
  net.dom_max = dom_max;

  if (spec.encoding.kind == EncodingSpec::Kind::FeatureGrid) {
    for (int l = 0; l < spec.encoding.levels; ++l) {
      const int knots = spec.encoding.level_res(l);
      net.tables.emplace_back(
          name_prefix + ".table" + std::to_string(l),
          uniform_tensor(rng, {static_cast<std::size_t>(knots),
                               static_cast<std::size_t>(spec.encoding.features)},
                         real(0.1)));
    }
  }

  std::size_t fan_in = static_cast<std::size_t>(spec.encoding.out_dim());
  const std::size_t width = static_cast<std::size_t>(spec.width);
  for (int l = 0; l < spec.hidden_layers; ++l) {
    const real wb = weight_bound(spec.activation, fan_in, width, l == 0);
    net.weights.emplace_back(name_prefix + ".w" + std::to_string(l),
                             uniform_tensor(rng, {fan_in, width}, wb));
    DenseTensor b({width});
    if (spec.activation.kind == Act::Finer && l == 0)
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-spec.activation.bias_k, spec.activation.bias_k);
    net.biases.emplace_back(name_prefix + ".b" + std::to_string(l), std::move(b));
    fan_in = width;
  }
  const std::size_t out_w = static_cast<std::size_t>(spec.out_width);
  const real hb = weight_bound(spec.activation, fan_in, out_w, spec.hidden_layers == 0);
  net.weights.emplace_back(name_prefix + ".whead", uniform_tensor(rng, {fan_in, out_w}, hb));
  net.biases.emplace_back(name_prefix + ".bhead", DenseTensor({out_w}));
  return net;
}

namespace {

struct JetMats {
  ad::Var value, d1, d2;
};

// Encoding features of the normalized coordinate, with chain factors for the
// physical-coordinate derivatives baked into d1/d2.
JetMats encode(ad::Tape& tape, AxisNet& net, std::span<const real> xs,
               const std::vector<real>& xhat, real chain, int jet_order) {
  const std::size_t p = xs.size();
  const EncodingSpec& enc = net.spec.encoding;
  JetMats jm;
  switch (enc.kind) {
    case EncodingSpec::Kind::None: {
      DenseTensor v({p, 1});
      for (std::size_t i = 0; i < p; ++i) v[i] = xhat[i];
      jm.value = tape.constant(std::move(v));
      if (jet_order >= 1) jm.d1 = tape.constant(DenseTensor::full({p, 1}, chain));
      if (jet_order >= 2) jm.d2 = tape.constant(DenseTensor({p, 1}));
      break;
    }
    case EncodingSpec::Kind::Fourier: {
      const std::size_t f = static_cast<std::size_t>(enc.out_dim());
      DenseTensor v({p, f}), d1({p, f}), d2({p, f});
      for (std::size_t i = 0; i < p; ++i)
        for (int l = 0; l < enc.levels; ++l) {
          const real freq = std::ldexp(std::numbers::pi_v<real>, l);  // 2^l * pi
          const real a = freq * xhat[i];
          const real sn = std::sin(a), cs = std::cos(a);
          const real fc = freq * chain;
          const std::size_t js = i * f + 2 * static_cast<std::size_t>(l);
          v[js] = sn;
          v[js + 1] = cs;
          d1[js] = fc * cs;
          d1[js + 1] = -fc * sn;
          d2[js] = -fc * fc * sn;
          d2[js + 1] = -fc * fc * cs;
        }
      jm.value = tape.constant(std::move(v));
      if (jet_order >= 1) jm.d1 = tape.constant(std::move(d1));
      if (jet_order >= 2) jm.d2 = tape.constant(std::move(d2));
      break;
    }
    case EncodingSpec::Kind::FeatureGrid: {
      // Piecewise-linear tables over [0, 1]; exact at knots, d2 is zero away
      // from knots which is what the blend reports everywhere.
      std::vector<ad::Var> vals, d1s;
      for (int l = 0; l < enc.levels; ++l) {
        const std::size_t knots = net.tables[static_cast<std::size_t>(l)].value.extent(0);
        std::vector<std::size_t> i0(p), i1(p);
        std::vector<real> w0(p), w1(p), dw0(p), dw1(p);
        const real cells = static_cast<real>(knots - 1);
        for (std::size_t i = 0; i < p; ++i) {
          real u = (xhat[i] + 1) / 2;
          u = std::min(real(1), std::max(real(0), u));
          real tpos = u * cells;
          std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(tpos), knots - 2);
          const real frac = tpos - static_cast<real>(j);
          i0[i] = j;
          i1[i] = j + 1;
          w0[i] = 1 - frac;
          w1[i] = frac;
          const real dslope = cells * chain / 2;  // d(u)/dx times knots-1
          dw0[i] = -dslope;
          dw1[i] = dslope;
        }
        ad::Var table = tape.leaf(net.tables[static_cast<std::size_t>(l)]);
        vals.push_back(tape.blend_rows(table, i0, w0, i1, w1));
        if (jet_order >= 1) d1s.push_back(tape.blend_rows(table, i0, dw0, i1, dw1));
      }
      jm.value = tape.concat_cols(vals);
      if (jet_order >= 1) jm.d1 = tape.concat_cols(d1s);
      if (jet_order >= 2)
        jm.d2 = tape.constant(DenseTensor({p, static_cast<std::size_t>(enc.out_dim())}));
      break;
    }
  }
  return jm;
}

}  // namespace

AxisJets forward_axis(ad::Tape& tape, AxisNet& net, std::span<const real> xs, int jet_order) {
  if (jet_order < 0 || jet_order > 2)
    throw CapabilityError("jet order must be 0, 1, or 2");
  if (xs.empty()) throw ShapeError("forward_axis needs at least one coordinate");
  const std::size_t p = xs.size();
  const real span = net.dom_max - net.dom_min;
  const real chain = 2 / span;
  std::vector<real> xhat(p);
  for (std::size_t i = 0; i < p; ++i) xhat[i] = 2 * (xs[i] - net.dom_min) / span - 1;

  JetMats h = encode(tape, net, xs, xhat, chain, jet_order);
  const Activation& act = net.spec.activation;
  const real fls = act.first_layer_scale();

  for (int l = 0; l < net.spec.hidden_layers; ++l) {
    ad::Var w = tape.leaf(net.weights[static_cast<std::size_t>(l)]);
    ad::Var b = tape.leaf(net.biases[static_cast<std::size_t>(l)]);
    ad::Var z = tape.add_rowvec(tape.matmul(h.value, w), b);
    ad::Var zd1, zd2;
    if (jet_order >= 1) zd1 = tape.matmul(h.d1, w);
    if (jet_order >= 2) zd2 = tape.matmul(h.d2, w);
    if (l == 0 && fls != 1) {
      z = tape.scale(z, fls);
      if (jet_order >= 1) zd1 = tape.scale(zd1, fls);
      if (jet_order >= 2) zd2 = tape.scale(zd2, fls);
    }
    JetMats nh;
    nh.value = tape.sigma(z, act, 0);
    if (jet_order >= 1) {
      ad::Var s1 = tape.sigma(z, act, 1);
      nh.d1 = tape.mul(s1, zd1);
      if (jet_order >= 2) {
        ad::Var s2 = tape.sigma(z, act, 2);
        nh.d2 = tape.add(tape.mul(s2, tape.mul(zd1, zd1)), tape.mul(s1, zd2));
      }
    }
    h = nh;
  }

  ad::Var wh = tape.leaf(net.weights.back());
  ad::Var bh = tape.leaf(net.biases.back());
  AxisJets out;
  out.value = tape.add_rowvec(tape.matmul(h.value, wh), bh);
  if (jet_order >= 1) out.d1 = tape.matmul(h.d1, wh);
  if (jet_order >= 2) out.d2 = tape.matmul(h.d2, wh);
  return out;
}

}  // namespace finr
