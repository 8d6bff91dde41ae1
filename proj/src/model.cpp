#include "finr/model.hpp"

#include <cmath>

#include "finr/errors.hpp"

namespace finr {

void FInrSpec::validate() const {
  if (axes.empty()) throw ConfigError("model needs at least one axis");
  if (d() + 1 > kMaxModes) throw ConfigError("too many axes for the dense output tensor");
  if (channels < 1) throw ConfigError("model needs at least one channel");
  const std::vector<std::size_t> widths = factor_widths(mode, d(), ranks);
  for (int k = 0; k < d(); ++k) {
    const AxisSpec& a = axes[static_cast<std::size_t>(k)];
    if (!(a.dom_max > a.dom_min))
      throw ConfigError("axis " + std::to_string(k) + " domain must have positive extent");
    if (a.net.out_width != 0 &&
        a.net.out_width != static_cast<int>(widths[static_cast<std::size_t>(k)]))
      throw ConfigError("axis " + std::to_string(k) + " emits width " +
                        std::to_string(a.net.out_width) + " but the composition expects " +
                        std::to_string(widths[static_cast<std::size_t>(k)]));
  }
}

FInrModel::FInrModel(FInrSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const std::vector<std::size_t> widths = factor_widths(spec_.mode, spec_.d(), spec_.ranks);
  Rng rng(seed);
  for (int k = 0; k < spec_.d(); ++k) {
    AxisSpec& a = spec_.axes[static_cast<std::size_t>(k)];
    a.net.out_width = static_cast<int>(widths[static_cast<std::size_t>(k)]);
    axes_.push_back(
        make_axis_net(a.net, a.dom_min, a.dom_max, "axis" + std::to_string(k), rng));
  }
  if (spec_.mode == Mode::TU) {
    std::vector<std::size_t> core_ext = spec_.ranks;
    core_ext.push_back(spec_.channels);
    DenseTensor core(core_ext);
    // Scale so a unit-variance factor product stays order one after the full contraction.
    real bound = 1;
    for (std::size_t r : spec_.ranks) bound /= std::sqrt(static_cast<real>(r));
    for (std::size_t i = 0; i < core.size(); ++i) core[i] = rng.uniform(-bound, bound);
    mixer_ = ad::Param("core", std::move(core));
  } else {
    const std::size_t r = spec_.ranks.back();
    const real bound = 1 / std::sqrt(static_cast<real>(r));
    DenseTensor mix({r, spec_.channels});
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = rng.uniform(-bound, bound);
    mixer_ = ad::Param("mix", std::move(mix));
  }
}

std::vector<ad::Param*> FInrModel::params() {
  std::vector<ad::Param*> out;
  for (AxisNet& a : axes_) a.collect_params(out);
  out.push_back(&mixer_);
  return out;
}

std::size_t FInrModel::param_count() {
  std::size_t n = 0;
  for (ad::Param* p : params()) n += p->value.size();
  return n;
}

void FInrModel::check_domain(int axis, real x) const {
  const AxisSpec& a = spec_.axes[static_cast<std::size_t>(axis)];
  const real slack = 1e-9 * (a.dom_max - a.dom_min);
  if (x < a.dom_min - slack || x > a.dom_max + slack)
    throw DomainError("coordinate " + std::to_string(x) + " outside axis " + std::to_string(axis) +
                      " domain [" + std::to_string(a.dom_min) + ", " + std::to_string(a.dom_max) +
                      "]");
}

void FInrModel::check_jet_support(int jet_order) const {
  if (jet_order < 2) return;
  for (const AxisSpec& a : spec_.axes)
    if (a.net.encoding.kind == EncodingSpec::Kind::FeatureGrid)
      throw CapabilityError(
          "feature-grid encoding has no usable second input derivative; "
          "second-order jets are refused");
}

std::vector<AxisJets> FInrModel::axis_forward(ad::Tape& tape,
                                              const std::vector<std::vector<real>>& axis_coords,
                                              int jet_order) {
  if (axis_coords.size() != static_cast<std::size_t>(d()))
    throw ShapeError("expected one coordinate list per axis");
  check_jet_support(jet_order);
  std::vector<AxisJets> jets;
  for (int k = 0; k < d(); ++k) {
    const std::vector<real>& xs = axis_coords[static_cast<std::size_t>(k)];
    for (real x : xs) check_domain(k, x);
    jets.push_back(forward_axis(tape, axes_[static_cast<std::size_t>(k)], xs, jet_order));
  }
  return jets;
}

ad::Var FInrModel::compose_batch(ad::Tape& tape, const std::vector<ad::Var>& rows) {
  if (rows.size() != static_cast<std::size_t>(d()))
    throw ShapeError("compose_batch: expected one row block per axis");
  return tape.compose_rows(spec_.mode, spec_.channels, spec_.ranks, rows, tape.leaf(mixer_));
}

FInrModel::GridEval FInrModel::eval_grid_nodes(ad::Tape& tape,
                                               const std::vector<std::vector<real>>& axis_coords,
                                               int jet_order) {
  const std::vector<AxisJets> jets = axis_forward(tape, axis_coords, jet_order);
  std::vector<ad::Var> mats;
  for (const AxisJets& j : jets) mats.push_back(j.value);
  ad::Var mix = tape.leaf(mixer_);
  GridEval ge;
  ge.value = tape.compose_grid(spec_.mode, spec_.channels, spec_.ranks, mats, mix);
  if (jet_order >= 1) {
    for (int k = 0; k < d(); ++k) {
      std::vector<ad::Var> m = mats;
      m[static_cast<std::size_t>(k)] = jets[static_cast<std::size_t>(k)].d1;
      ge.d1.push_back(tape.compose_grid(spec_.mode, spec_.channels, spec_.ranks, m, mix));
    }
  }
  if (jet_order >= 2) {
    for (int k = 0; k < d(); ++k) {
      std::vector<ad::Var> m = mats;
      m[static_cast<std::size_t>(k)] = jets[static_cast<std::size_t>(k)].d2;
      ge.d2.push_back(tape.compose_grid(spec_.mode, spec_.channels, spec_.ranks, m, mix));
    }
  }
  return ge;
}

DenseTensor FInrModel::eval_grid(const std::vector<std::vector<real>>& axis_coords) {
  ad::Tape tape;
  return tape.value(eval_grid_nodes(tape, axis_coords, 0).value);
}

FInrModel::PointsEval FInrModel::eval_points_nodes(ad::Tape& tape, const DenseTensor& pts,
                                                   int jet_order) {
  if (pts.order() != 2 || pts.extent(1) != static_cast<std::size_t>(d()))
    throw ShapeError("points must be (count, axes)");
  const std::size_t p = pts.extent(0);
  std::vector<std::vector<real>> axis_coords(static_cast<std::size_t>(d()));
  for (std::size_t i = 0; i < p; ++i)
    for (int k = 0; k < d(); ++k)
      axis_coords[static_cast<std::size_t>(k)].push_back(pts.at(i, static_cast<std::size_t>(k)));
  const std::vector<AxisJets> jets = axis_forward(tape, axis_coords, jet_order);
  std::vector<ad::Var> rows;
  for (const AxisJets& j : jets) rows.push_back(j.value);
  ad::Var mix = tape.leaf(mixer_);
  PointsEval pe;
  pe.value = tape.compose_rows(spec_.mode, spec_.channels, spec_.ranks, rows, mix);
  if (jet_order >= 1) {
    for (int k = 0; k < d(); ++k) {
      std::vector<ad::Var> r = rows;
      r[static_cast<std::size_t>(k)] = jets[static_cast<std::size_t>(k)].d1;
      pe.d1.push_back(tape.compose_rows(spec_.mode, spec_.channels, spec_.ranks, r, mix));
    }
  }
  if (jet_order >= 2) {
    for (int k = 0; k < d(); ++k) {
      std::vector<ad::Var> r = rows;
      r[static_cast<std::size_t>(k)] = jets[static_cast<std::size_t>(k)].d2;
      pe.d2.push_back(tape.compose_rows(spec_.mode, spec_.channels, spec_.ranks, r, mix));
    }
  }
  return pe;
}

DenseTensor FInrModel::eval_points(const DenseTensor& pts) {
  ad::Tape tape;
  return tape.value(eval_points_nodes(tape, pts, 0).value);
}

MonolithicModel::MonolithicModel(MonolithicSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.axes.empty()) throw ConfigError("monolithic model needs at least one input axis");
  if (spec_.hidden_layers < 1) throw ConfigError("monolithic model needs a hidden layer");
  Rng rng(seed);
  std::size_t fan_in = spec_.axes.size();
  const std::size_t width = static_cast<std::size_t>(spec_.width);
  auto bound = [&](std::size_t fi, std::size_t fo, bool first) {
    if (spec_.activation.kind == Act::Sine || spec_.activation.kind == Act::Gabor ||
        spec_.activation.kind == Act::Finer) {
      if (first) return real(1) / static_cast<real>(fi);
      return std::sqrt(real(6) / static_cast<real>(fi)) / spec_.activation.omega0;
    }
    return std::sqrt(real(6) / static_cast<real>(fi + fo));
  };
  for (int l = 0; l < spec_.hidden_layers; ++l) {
    DenseTensor w({fan_in, width});
    const real b = bound(fan_in, width, l == 0);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-b, b);
    weights_.emplace_back("mono.w" + std::to_string(l), std::move(w));
    biases_.emplace_back("mono.b" + std::to_string(l), DenseTensor({width}));
    fan_in = width;
  }
  DenseTensor wh({fan_in, spec_.channels});
  const real b = bound(fan_in, spec_.channels, false);
  for (std::size_t i = 0; i < wh.size(); ++i) wh[i] = rng.uniform(-b, b);
  weights_.emplace_back("mono.whead", std::move(wh));
  biases_.emplace_back("mono.bhead", DenseTensor({spec_.channels}));
}

std::vector<ad::Param*> MonolithicModel::params() {
  std::vector<ad::Param*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::size_t MonolithicModel::param_count() {
  std::size_t n = 0;
  for (ad::Param* p : params()) n += p->value.size();
  return n;
}

ad::Var MonolithicModel::forward(ad::Tape& tape, const DenseTensor& pts) {
  if (pts.order() != 2 || pts.extent(1) != spec_.axes.size())
    throw ShapeError("points must be (count, axes)");
  const std::size_t p = pts.extent(0), d = spec_.axes.size();
  DenseTensor xhat({p, d});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const AxisSpec& a = spec_.axes[k];
      xhat.at(i, k) = 2 * (pts.at(i, k) - a.dom_min) / (a.dom_max - a.dom_min) - 1;
    }
  ad::Var h = tape.constant(std::move(xhat));
  const real fls = spec_.activation.first_layer_scale();
  for (int l = 0; l < spec_.hidden_layers; ++l) {
    ad::Var z = tape.add_rowvec(tape.matmul(h, tape.leaf(weights_[static_cast<std::size_t>(l)])),
                                tape.leaf(biases_[static_cast<std::size_t>(l)]));
    if (l == 0 && fls != 1) z = tape.scale(z, fls);
    h = tape.sigma(z, spec_.activation, 0);
  }
  return tape.add_rowvec(tape.matmul(h, tape.leaf(weights_.back())), tape.leaf(biases_.back()));
}

ComplexityEstimate predict_cost(const std::string& model_kind, int d, std::size_t n, std::size_t m,
                                std::size_t l, std::size_t r) {
  if (d < 1) throw ConfigError("cost model needs at least one axis");
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  const double dl = static_cast<double>(l), dr = static_cast<double>(r);
  double grid = 1;
  for (int k = 0; k < d; ++k) grid *= dn;
  ComplexityEstimate ce;
  if (model_kind == "monolithic" || model_kind == "mono") {
    ce.network = dm * dm * dl * grid;
    ce.compose = 0;
  } else if (model_kind == "cp") {
    ce.network = dm * dm * dl * dn * dr;
    ce.compose = dn * dn * dr * dr;
  } else if (model_kind == "tt") {
    ce.network = dm * dm * dl * dn * dr * dr;
    ce.compose = dn * dn * dr * dr;
  } else if (model_kind == "tu" || model_kind == "tucker") {
    ce.network = dm * dm * dl * dn * dr;
    ce.compose = dr * grid;
  } else {
    throw ConfigError("unknown cost model kind '" + model_kind + "'");
  }
  return ce;
}

}  // namespace finr
