#include "finr/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "finr/errors.hpp"
#include "finr/metrics.hpp"

namespace finr {

namespace {

constexpr real kPi = std::numbers::pi_v<real>;

std::vector<real> linspace(real lo, real hi, std::size_t n, bool inclusive) {
  std::vector<real> xs(n);
  if (n == 1) {
    xs[0] = lo;
    return xs;
  }
  const real step = (hi - lo) / real(inclusive ? n - 1 : n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = lo + step * real(i);
  return xs;
}

std::vector<real> pixel_centers(std::size_t n) {
  std::vector<real> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = (real(i) + real(0.5)) / real(n);
  return xs;
}

// 1-of-width column selector as a constant, so a (P,width) matmul extracts
// one channel with gradients routed back through the matmul adjoint.
ad::Var column(ad::Tape& t, ad::Var m, std::size_t c, std::size_t width) {
  DenseTensor sel({width, 1});
  sel[c] = 1;
  return t.matmul(m, t.constant(std::move(sel)));
}

ad::Var mean_sq(ad::Tape& t, ad::Var a) { return t.mean_sq(a); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw CapabilityError(msg);
}

void require_domain(const FInrModel& model, int axis, real lo, real hi) {
  const AxisSpec& a = model.spec().axes[static_cast<std::size_t>(axis)];
  if (a.dom_min > lo || a.dom_max < hi)
    throw CapabilityError("model axis " + std::to_string(axis) + " domain [" +
                          std::to_string(a.dom_min) + ", " + std::to_string(a.dom_max) +
                          "] does not cover the task domain [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
}

}  // namespace

// ---- generators ------------------------------------------------------------

DenseTensor make_sinusoid_image(std::uint64_t seed, std::size_t h, std::size_t w,
                                std::size_t terms, std::size_t max_freq) {
  if (h == 0 || w == 0) throw ShapeError("image extents must be positive");
  if (terms == 0 || terms > 8) throw ConfigError("sinusoid image supports 1..8 terms");
  if (max_freq == 0) throw ConfigError("max_freq must be positive");
  Rng rng(seed);
  struct Term {
    real a, fx, fy, phase;
  };
  std::vector<Term> ts;
  real amp_sum = 0;
  for (std::size_t k = 0; k < terms; ++k) {
    Term t;
    t.a = rng.uniform(0.3, 1.0);
    const auto freq = [&] { return real(1 + rng.next_below(max_freq)); };
    if (k == 0) {  // axis-aligned pair keeps the separable rank within budget
      t.fx = freq();
      t.fy = 0;
    } else if (k == 1) {
      t.fx = 0;
      t.fy = freq();
    } else {
      t.fx = freq();
      t.fy = freq();
    }
    t.phase = rng.uniform(0, 2 * kPi);
    amp_sum += t.a;
    ts.push_back(t);
  }
  const std::vector<real> xs = pixel_centers(h), ys = pixel_centers(w);
  DenseTensor img({h, w, 1});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      real s = 0;
      for (const Term& t : ts) s += t.a * std::sin(2 * kPi * (t.fx * xs[i] + t.fy * ys[j]) + t.phase);
      img[i * w + j] = real(0.5) + real(0.5) * s / amp_sum;
    }
  return img;
}

Shape shape_from_name(const std::string& name) {
  if (name == "sphere") return Shape::sphere;
  if (name == "torus") return Shape::torus;
  if (name == "two_spheres") return Shape::two_spheres;
  throw ConfigError("unknown shape '" + name + "' (sphere | torus | two_spheres)");
}

namespace {
constexpr real kSphereR = 0.6;
constexpr real kTorusR = 0.55, kTorusr = 0.25;
constexpr real kTwoCx = 0.45, kTwoR = 0.35;
}  // namespace

real shape_sdf(Shape s, real x, real y, real z) {
  switch (s) {
    case Shape::sphere:
      return std::sqrt(x * x + y * y + z * z) - kSphereR;
    case Shape::torus: {
      const real q = std::sqrt(x * x + y * y) - kTorusR;
      return std::sqrt(q * q + z * z) - kTorusr;
    }
    case Shape::two_spheres: {
      const real a = std::sqrt((x - kTwoCx) * (x - kTwoCx) + y * y + z * z) - kTwoR;
      const real b = std::sqrt((x + kTwoCx) * (x + kTwoCx) + y * y + z * z) - kTwoR;
      return std::min(a, b);
    }
  }
  throw ConfigError("unreachable shape");
}

std::array<real, 3> shape_sdf_grad(Shape s, real x, real y, real z) {
  const auto unit = [](real a, real b, real c) -> std::array<real, 3> {
    const real n = std::sqrt(a * a + b * b + c * c);
    if (n == 0) return {0, 0, 0};
    return {a / n, b / n, c / n};
  };
  switch (s) {
    case Shape::sphere:
      return unit(x, y, z);
    case Shape::torus: {
      const real sxy = std::sqrt(x * x + y * y);
      const real q = sxy - kTorusR;
      const real m = std::sqrt(q * q + z * z);
      if (m == 0 || sxy == 0) return {0, 0, 0};  // cut locus, measure zero
      return {q * x / (sxy * m), q * y / (sxy * m), z / m};
    }
    case Shape::two_spheres: {
      const real a = std::sqrt((x - kTwoCx) * (x - kTwoCx) + y * y + z * z) - kTwoR;
      const real b = std::sqrt((x + kTwoCx) * (x + kTwoCx) + y * y + z * z) - kTwoR;
      return a <= b ? unit(x - kTwoCx, y, z) : unit(x + kTwoCx, y, z);
    }
  }
  throw ConfigError("unreachable shape");
}

DenseTensor sample_sdf_grid(Shape s, std::size_t n) {
  if (n < 2) throw ConfigError("sdf grid needs n >= 2");
  const std::vector<real> xs = linspace(-1, 1, n, true);
  DenseTensor g({n, n, n, 1});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) g[(i * n + j) * n + k] = shape_sdf(s, xs[i], xs[j], xs[k]);
  return g;
}

DenseTensor truncate_sdf(const DenseTensor& raw, real tau) {
  if (tau <= 0) throw ConfigError("truncation threshold must be positive");
  DenseTensor out = raw;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], -tau, tau);
  return out;
}

// ---- physics ----------------------------------------------------------------

FlowSample taylor_green(real t, real x, real y, real nu) {
  const real f = std::exp(-2 * nu * t);
  return {std::cos(x) * std::sin(y) * f, -std::sin(x) * std::cos(y) * f,
          -2 * std::cos(x) * std::cos(y) * f};
}

NsResidualValues ns_residual(const NsPointValues& v, real nu) {
  return {v.dt_omega + v.ux * v.dx_omega + v.uy * v.dy_omega - nu * (v.dxx_omega + v.dyy_omega),
          v.dx_ux + v.dy_uy, v.omega - (v.dx_uy - v.dy_ux)};
}

NsResidualNodes ns_residual_nodes(ad::Tape& tape, const FInrModel::PointsEval& pe, real nu) {
  if (pe.d1.size() != 3 || pe.d2.size() != 3)
    throw ShapeError("ns_residual_nodes needs order-2 jets over (t,x,y)");
  const std::size_t w = tape.value(pe.value).extent(1);
  if (w != 3) throw ShapeError("ns_residual_nodes needs 3 output channels (u_x,u_y,omega)");
  const auto col = [&](ad::Var m, std::size_t c) { return column(tape, m, c, 3); };
  // axis 0 = t, axis 1 = x, axis 2 = y; channels 0 = u_x, 1 = u_y, 2 = omega
  ad::Var ux = col(pe.value, 0), uy = col(pe.value, 1), om = col(pe.value, 2);
  ad::Var wt = col(pe.d1[0], 2);
  ad::Var wx = col(pe.d1[1], 2), wy = col(pe.d1[2], 2);
  ad::Var wxx = col(pe.d2[1], 2), wyy = col(pe.d2[2], 2);
  ad::Var adv = tape.add(tape.mul(ux, wx), tape.mul(uy, wy));
  ad::Var lap = tape.add(wxx, wyy);
  ad::Var mom = tape.sub(tape.add(wt, adv), tape.scale(lap, nu));
  ad::Var div = tape.add(col(pe.d1[1], 0), col(pe.d1[2], 1));
  ad::Var curl = tape.sub(col(pe.d1[1], 1), col(pe.d1[2], 0));
  ad::Var def = tape.sub(om, curl);
  return {mom, div, def};
}

DenseTensor sample_collocation(Rng& rng, std::size_t count,
                               const std::vector<std::pair<real, real>>& box) {
  if (count == 0) throw ConfigError("collocation count must be >= 1");
  if (box.empty()) throw ConfigError("collocation box must have at least one axis");
  DenseTensor pts({count, box.size()});
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t k = 0; k < box.size(); ++k) {
      if (box[k].second <= box[k].first) throw ConfigError("degenerate collocation box axis");
      pts[p * box.size() + k] = rng.uniform(box[k].first, box[k].second);
    }
  return pts;
}

// ---- image task ---------------------------------------------------------------

ImageTask::ImageTask(DenseTensor target, ImageTaskConfig cfg) : target_(std::move(target)) {
  if (target_.order() != 3) throw ShapeError("image target must be (H, W, C)");
  const std::size_t c = target_.extent(2);
  if (c != 1 && c != 3) throw ShapeError("image channels must be 1 or 3");
  for (std::size_t i = 0; i < target_.size(); ++i)
    if (!std::isfinite(target_[i]) || target_[i] < 0 || target_[i] > 1)
      throw DomainError("image target values must lie in [0,1]");
  const std::size_t pixels = target_.extent(0) * target_.extent(1);
  batch_ = std::min(cfg.batch, pixels);
  if (batch_ == 0) throw ConfigError("image batch must be >= 1");
  coords_ = {pixel_centers(target_.extent(0)), pixel_centers(target_.extent(1))};
}

void ImageTask::check_model(FInrModel& model) const {
  require(model.d() == 2, "image fitting expects a 2-axis model, got d=" +
                              std::to_string(model.d()));
  require(model.spec().channels == target_.extent(2),
          "model emits " + std::to_string(model.spec().channels) + " channels, image has " +
              std::to_string(target_.extent(2)));
  require_domain(model, 0, coords_[0].front(), coords_[0].back());
  require_domain(model, 1, coords_[1].front(), coords_[1].back());
  model.check_jet_support(0);
}

ad::Var ImageTask::batch_loss(ad::Tape& tape, FInrModel& model,
                              const std::vector<std::size_t>& pixel_ids) {
  const std::size_t h = target_.extent(0), w = target_.extent(1), c = target_.extent(2);
  std::vector<AxisJets> jets = model.axis_forward(tape, coords_, 0);
  std::vector<std::size_t> rows0(pixel_ids.size()), rows1(pixel_ids.size());
  DenseTensor tb({pixel_ids.size(), c});
  for (std::size_t b = 0; b < pixel_ids.size(); ++b) {
    const std::size_t id = pixel_ids[b];
    if (id >= h * w) throw ShapeError("pixel id out of range");
    rows0[b] = id / w;
    rows1[b] = id % w;
    for (std::size_t q = 0; q < c; ++q) tb[b * c + q] = target_[id * c + q];
  }
  std::vector<ad::Var> rows = {tape.gather_rows(jets[0].value, std::move(rows0)),
                               tape.gather_rows(jets[1].value, std::move(rows1))};
  ad::Var pred = model.compose_batch(tape, rows);
  ad::Var diff = tape.sub(pred, tape.constant(std::move(tb)));
  return mean_sq(tape, diff);
}

ad::Var ImageTask::loss(ad::Tape& tape, FInrModel& model, Rng& rng, NamedValues& parts) {
  const std::size_t pixels = target_.extent(0) * target_.extent(1);
  ad::Var l;
  if (batch_ >= pixels) {
    FInrModel::GridEval ge = model.eval_grid_nodes(tape, coords_, 0);
    ad::Var diff = tape.sub(ge.value, tape.constant(target_));
    l = mean_sq(tape, diff);
  } else {
    std::vector<std::size_t> ids(batch_);
    for (std::size_t& id : ids) id = rng.next_below(pixels);
    l = batch_loss(tape, model, ids);
  }
  parts.emplace_back("mse_batch", tape.value(l)[0]);
  return l;
}

DenseTensor ImageTask::predict(FInrModel& model) const { return model.eval_grid(coords_); }

NamedValues ImageTask::evaluate(FInrModel& model) {
  const DenseTensor pred = predict(model);
  NamedValues out;
  out.emplace_back("mse", mse(pred, target_));
  out.emplace_back("psnr", psnr(pred, target_, 1.0));
  out.emplace_back("ssim", ssim(pred, target_));
  return out;
}

// ---- sdf task --------------------------------------------------------------------

SdfTask::SdfTask(Shape shape, std::size_t n, SdfTaskConfig cfg)
    : shape_(shape), n_(n), cfg_(cfg) {
  if (cfg_.tau <= 0 || cfg_.band_frac <= 0) throw ConfigError("sdf thresholds must be positive");
  if (cfg_.w_eik < 0 || cfg_.w_data < 0 || cfg_.w_surf < 0)
    throw ConfigError("sdf loss weights must be non-negative");
  raw_ = sample_sdf_grid(shape, n);
  trunc_ = truncate_sdf(raw_, cfg_.tau);
  const real band = cfg_.band_frac * 2 * std::sqrt(real(3));  // fraction of the cube diagonal
  for (std::size_t i = 0; i < raw_.size(); ++i)
    if (std::abs(raw_[i]) < band) band_.push_back(i);
  const std::vector<real> xs = linspace(-1, 1, n, true);
  coords_ = {xs, xs, xs};
}

void SdfTask::check_model(FInrModel& model) const {
  require(model.d() == 3, "sdf fitting expects a 3-axis model, got d=" + std::to_string(model.d()));
  require(model.spec().channels == 1, "sdf fitting expects a single output channel");
  for (int k = 0; k < 3; ++k) require_domain(model, k, -1, 1);
  model.check_jet_support(1);
}

SdfLossNodes sdf_loss_nodes(ad::Tape& tape, ad::Var psi, const std::array<ad::Var, 3>& grad,
                            ad::Var target, const std::vector<std::size_t>& band,
                            const SdfTaskConfig& cfg) {
  // Eikonal: mean | sqrt(gx^2+gy^2+gz^2) - 1 |, with a tiny floor so the
  // square root stays differentiable at zero gradient.
  ad::Var g2 = tape.add(tape.mul(grad[0], grad[0]),
                        tape.add(tape.mul(grad[1], grad[1]), tape.mul(grad[2], grad[2])));
  ad::Var gnorm = tape.sqrt(tape.add_scalar(g2, 1e-12));
  SdfLossNodes out;
  out.eik = tape.mean(tape.abs(tape.add_scalar(gnorm, -1)));
  out.data = tape.mean(tape.abs(tape.sub(psi, target)));
  out.total = tape.add(tape.scale(out.eik, cfg.w_eik), tape.scale(out.data, cfg.w_data));
  out.surf = out.data;  // placeholder when the band is empty; has_surf says so
  if (!band.empty()) {
    ad::Var band_pred = tape.gather_rows(psi, band);
    ad::Var band_true = tape.gather_rows(target, band);
    out.surf = tape.mean(tape.abs(tape.sub(band_pred, band_true)));
    out.has_surf = true;
    out.total = tape.add(out.total, tape.scale(out.surf, cfg.w_surf));
  }
  return out;
}

ad::Var SdfTask::loss(ad::Tape& tape, FInrModel& model, Rng&, NamedValues& parts) {
  FInrModel::GridEval ge = model.eval_grid_nodes(tape, coords_, 1);
  const std::size_t count = raw_.size();
  ad::Var psi = tape.reshape(ge.value, {count, 1});
  const std::array<ad::Var, 3> grad = {tape.reshape(ge.d1[0], {count, 1}),
                                       tape.reshape(ge.d1[1], {count, 1}),
                                       tape.reshape(ge.d1[2], {count, 1})};
  ad::Var target = tape.constant(DenseTensor::from_data({count, 1}, trunc_.vec()));
  const SdfLossNodes nodes = sdf_loss_nodes(tape, psi, grad, target, band_, cfg_);
  parts.emplace_back("l_eik", tape.value(nodes.eik)[0]);
  parts.emplace_back("l_data", tape.value(nodes.data)[0]);
  parts.emplace_back("l_surf", nodes.has_surf ? tape.value(nodes.surf)[0] : 0);
  return nodes.total;
}

DenseTensor SdfTask::predict(FInrModel& model) const { return model.eval_grid(coords_); }

NamedValues SdfTask::evaluate(FInrModel& model) {
  // Metrics need the Eikonal residual too, so run an order-1 grid pass.
  ad::Tape tape;
  FInrModel::GridEval ge = model.eval_grid_nodes(tape, coords_, 1);
  const DenseTensor pred = tape.value(ge.value);
  real eik = 0;
  {
    const DenseTensor &gx = tape.value(ge.d1[0]), &gy = tape.value(ge.d1[1]),
                      &gz = tape.value(ge.d1[2]);
    for (std::size_t i = 0; i < gx.size(); ++i)
      eik += std::abs(std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + gz[i] * gz[i]) - 1);
    eik /= real(gx.size());
  }
  NamedValues out;
  out.emplace_back("iou", iou(pred, raw_));
  out.emplace_back("mse", mse(pred, trunc_));
  out.emplace_back("eik", eik);
  return out;
}

NamedValues SdfTask::oracle_metrics() const {
  const std::vector<real> xs = coords_[0];
  real eik = 0;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j)
      for (std::size_t k = 0; k < n_; ++k) {
        const std::array<real, 3> g = shape_sdf_grad(shape_, xs[i], xs[j], xs[k]);
        eik += std::abs(std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) - 1);
      }
  eik /= real(raw_.size());
  NamedValues out;
  out.emplace_back("iou", iou(raw_, raw_));
  out.emplace_back("mse", 0);
  out.emplace_back("eik", eik);
  return out;
}

// ---- pinn task ---------------------------------------------------------------------

PinnTask::PinnTask(PinnTaskConfig cfg) : cfg_(cfg) {
  if (cfg_.nu <= 0) throw ConfigError("viscosity must be positive");
  if (cfg_.obs_t < 2 || cfg_.obs_x < 2 || cfg_.obs_y < 2)
    throw ConfigError("observation grid too small");
  if (cfg_.collocation == 0) throw ConfigError("collocation count must be >= 1");
  if (cfg_.w_data < 0 || cfg_.w_pde < 0) throw ConfigError("loss weights must be non-negative");
  // Time is sampled inclusively over [0,1]; space uses the periodic convention
  // x_i = 2*pi*i/N (endpoint excluded, it aliases x=0).
  obs_coords_ = {linspace(0, 1, cfg_.obs_t, true), linspace(0, 2 * kPi, cfg_.obs_x, false),
                 linspace(0, 2 * kPi, cfg_.obs_y, false)};
  eval_coords_ = {linspace(0, 1, cfg_.eval_t, true), linspace(0, 2 * kPi, cfg_.eval_x, false),
                  linspace(0, 2 * kPi, cfg_.eval_y, false)};
  obs_ = reference_grid(obs_coords_);
}

DenseTensor PinnTask::reference_grid(const std::vector<std::vector<real>>& coords) const {
  const std::size_t nt = coords[0].size(), nx = coords[1].size(), ny = coords[2].size();
  DenseTensor g({nt, nx, ny, 3});
  for (std::size_t a = 0; a < nt; ++a)
    for (std::size_t b = 0; b < nx; ++b)
      for (std::size_t c = 0; c < ny; ++c) {
        const FlowSample s = taylor_green(coords[0][a], coords[1][b], coords[2][c], cfg_.nu);
        real* row = g.data() + ((a * nx + b) * ny + c) * 3;
        row[0] = s.ux;
        row[1] = s.uy;
        row[2] = s.omega;
      }
  return g;
}

void PinnTask::check_model(FInrModel& model) const {
  require(model.d() == 3, "flow fitting expects a (t,x,y) model, got d=" +
                              std::to_string(model.d()));
  require(model.spec().channels == 3, "flow fitting expects 3 output channels (u_x,u_y,omega)");
  require_domain(model, 0, 0, 1);
  require_domain(model, 1, 0, 2 * kPi);
  require_domain(model, 2, 0, 2 * kPi);
  model.check_jet_support(2);  // rejects encodings without second derivatives
}

ad::Var PinnTask::loss(ad::Tape& tape, FInrModel& model, Rng& rng, NamedValues& parts) {
  // A zero weight skips its term entirely, so w_pde = 0 is literally
  // supervised regression (and w_data = 0 is pure physics). The collocation
  // draw still happens in the pde branch only, keeping rng replay stable for
  // a fixed weight configuration.
  ad::Var total;
  real data_v = 0, pde_v = 0;
  if (cfg_.w_data > 0) {
    FInrModel::GridEval ge = model.eval_grid_nodes(tape, obs_coords_, 0);
    ad::Var ldata = mean_sq(tape, tape.sub(ge.value, tape.constant(obs_)));
    data_v = tape.value(ldata)[0];
    total = tape.scale(ldata, cfg_.w_data);
  }
  if (cfg_.w_pde > 0) {
    const DenseTensor pts =
        sample_collocation(rng, cfg_.collocation, {{0, 1}, {0, 2 * kPi}, {0, 2 * kPi}});
    FInrModel::PointsEval pe = model.eval_points_nodes(tape, pts, 2);
    NsResidualNodes r = ns_residual_nodes(tape, pe, cfg_.nu);
    ad::Var lpde =
        tape.add(mean_sq(tape, r.mom), tape.add(mean_sq(tape, r.div), mean_sq(tape, r.def)));
    pde_v = tape.value(lpde)[0];
    ad::Var scaled = tape.scale(lpde, cfg_.w_pde);
    total = total.valid() ? tape.add(total, scaled) : scaled;
  }
  if (!total.valid()) throw ConfigError("both flow loss weights are zero");
  parts.emplace_back("l_data", data_v);
  parts.emplace_back("l_pde", pde_v);
  return total;
}

DenseTensor PinnTask::predict(FInrModel& model) const { return model.eval_grid(eval_coords_); }

NamedValues PinnTask::evaluate(FInrModel& model) {
  const DenseTensor pred = predict(model);
  const DenseTensor ref = reference_grid(eval_coords_);
  const std::size_t rows = pred.size() / 3;
  real all = 0, om = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const real d = pred[i * 3 + c] - ref[i * 3 + c];
      all += d * d;
      if (c == 2) om += d * d;
    }
  }
  NamedValues out;
  out.emplace_back("mse_omega", om / real(rows));
  out.emplace_back("mse_all", all / real(rows * 3));
  return out;
}

}  // namespace finr
