#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "finr/autodiff.hpp"
#include "finr/model.hpp"
#include "finr/rng.hpp"
#include "finr/tensor.hpp"

namespace finr {

// Named loss components / metric values for one step, in CSV column order.
using NamedValues = std::vector<std::pair<std::string, real>>;

// ---- ground-truth generators ------------------------------------------

// Sum of `terms` random sinusoids sin(2pi(fx*x + fy*y) + phase), normalized
// into [0,1], sampled at pixel centers. The first two terms are axis-aligned
// and the rest are free, so the separable rank including the constant offset
// stays <= 2*terms, and <= 16 for the default 8 terms.
DenseTensor make_sinusoid_image(std::uint64_t seed, std::size_t h, std::size_t w,
                                std::size_t terms = 8, std::size_t max_freq = 4);

enum class Shape { sphere, torus, two_spheres };
Shape shape_from_name(const std::string& name);

// Exact signed distance and its gradient at a point of [-1,1]^3.
real shape_sdf(Shape s, real x, real y, real z);
std::array<real, 3> shape_sdf_grad(Shape s, real x, real y, real z);

// Exact SDF sampled on the inclusive n^3 lattice over [-1,1]^3, shape (n,n,n,1).
DenseTensor sample_sdf_grid(Shape s, std::size_t n);

// Clamp every value to [-tau, tau].
DenseTensor truncate_sdf(const DenseTensor& raw, real tau = 0.1);

// ---- physics references -------------------------------------------------

struct FlowSample {
  real ux, uy, omega;
};
// Decaying vortex lattice, an exact solution of the 2D incompressible
// Navier-Stokes equations in vorticity form.
FlowSample taylor_green(real t, real x, real y, real nu);

// Channel values and derivatives at one point, for the plain-number residual.
struct NsPointValues {
  real ux = 0, uy = 0, omega = 0;
  real dt_omega = 0;
  real dx_ux = 0, dx_uy = 0, dx_omega = 0;
  real dy_ux = 0, dy_uy = 0, dy_omega = 0;
  real dxx_omega = 0, dyy_omega = 0;
};
struct NsResidualValues {
  real mom, div, def;
};
// mom = dt_w + ux dx_w + uy dy_w - nu (dxx_w + dyy_w)
// div = dx_ux + dy_uy
// def = w - (dx_uy - dy_ux)
NsResidualValues ns_residual(const NsPointValues& v, real nu);

// Tape form over a batch: builds the three residual columns, each (P,1),
// from a (t,x,y) -> (u_x,u_y,omega) point evaluation with order-2 jets.
struct NsResidualNodes {
  ad::Var mom, div, def;
};
NsResidualNodes ns_residual_nodes(ad::Tape& tape, const FInrModel::PointsEval& pe, real nu);

// `count` uniform pseudorandom points in the axis-aligned box, shape (count, d).
DenseTensor sample_collocation(Rng& rng, std::size_t count,
                               const std::vector<std::pair<real, real>>& box);

// ---- task interface -------------------------------------------------------

class Task {
 public:
  virtual ~Task() = default;
  virtual std::string kind() const = 0;
  // Raises CapabilityError before the first step when the model cannot serve
  // this task (dimension, channels, domain, jet order).
  virtual void check_model(FInrModel& model) const = 0;
  // Builds one training step's loss on the tape. Component values are
  // appended to parts under stable names.
  virtual ad::Var loss(ad::Tape& tape, FInrModel& model, Rng& rng, NamedValues& parts) = 0;
  // Full-quality metrics, evaluated at reporting cadence.
  virtual NamedValues evaluate(FInrModel& model) = 0;
};

// ---- image fitting ----------------------------------------------------------

struct ImageTaskConfig {
  std::size_t batch = std::size_t(1) << 18;  // clipped to the pixel count
};

class ImageTask final : public Task {
 public:
  ImageTask(DenseTensor target, ImageTaskConfig cfg = {});

  std::string kind() const override { return "image"; }
  void check_model(FInrModel& model) const override;
  ad::Var loss(ad::Tape& tape, FInrModel& model, Rng& rng, NamedValues& parts) override;
  NamedValues evaluate(FInrModel& model) override;

  // MSE over an explicit pixel-id batch (row-major ids); the training loss
  // over a batch enumerating every pixel equals full-grid MSE exactly.
  ad::Var batch_loss(ad::Tape& tape, FInrModel& model, const std::vector<std::size_t>& pixel_ids);

  const DenseTensor& target() const { return target_; }
  const std::vector<std::vector<real>>& axis_coords() const { return coords_; }
  DenseTensor predict(FInrModel& model) const;

 private:
  DenseTensor target_;  // (H, W, C), values in [0,1]
  std::size_t batch_;
  std::vector<std::vector<real>> coords_;  // pixel centers in [0,1] per axis
};

// ---- SDF fitting --------------------------------------------------------------

struct SdfTaskConfig {
  real tau = 0.1;           // truncation threshold
  real band_frac = 0.01;    // surface band half-width as a fraction of the domain diagonal
  real w_eik = 0.1;         // |grad| = 1 penalty
  real w_data = 1.0;        // truncated-value fit over the whole grid
  real w_surf = 3.0;        // extra fit weight inside the surface band
};

// Distance-field loss over a sample column psi (P,1) with its spatial
// gradient columns: w_eik * mean| ||grad|| - 1 | + w_data * mean|psi - target|
// + w_surf * mean|psi - target| restricted to the band rows (skipped when the
// band is empty). Component nodes are exposed for reporting and tests.
struct SdfLossNodes {
  ad::Var total, eik, data, surf;
  bool has_surf = false;
};
SdfLossNodes sdf_loss_nodes(ad::Tape& tape, ad::Var psi, const std::array<ad::Var, 3>& grad,
                            ad::Var target, const std::vector<std::size_t>& band,
                            const SdfTaskConfig& cfg);

class SdfTask final : public Task {
 public:
  SdfTask(Shape shape, std::size_t n, SdfTaskConfig cfg = {});

  std::string kind() const override { return "sdf"; }
  void check_model(FInrModel& model) const override;
  ad::Var loss(ad::Tape& tape, FInrModel& model, Rng& rng, NamedValues& parts) override;
  NamedValues evaluate(FInrModel& model) override;

  // Metrics of the analytic field against itself (plumbing check: IoU = 1,
  // Eikonal residual ~ 0 away from cut loci).
  NamedValues oracle_metrics() const;

  const DenseTensor& raw() const { return raw_; }
  const DenseTensor& target() const { return trunc_; }
  const std::vector<std::size_t>& band() const { return band_; }
  const std::vector<std::vector<real>>& axis_coords() const { return coords_; }
  Shape shape() const { return shape_; }
  DenseTensor predict(FInrModel& model) const;

 private:
  Shape shape_;
  std::size_t n_;
  SdfTaskConfig cfg_;
  DenseTensor raw_;               // exact SDF (n,n,n,1)
  DenseTensor trunc_;             // clamped to [-tau, tau]
  std::vector<std::size_t> band_; // flat grid ids with |raw| < band_frac * diagonal
  std::vector<std::vector<real>> coords_;
};

// ---- Navier-Stokes super-resolution -----------------------------------------

struct PinnTaskConfig {
  real nu = 0.01;
  std::size_t obs_t = 6, obs_x = 32, obs_y = 32;    // coarse observation grid
  std::size_t eval_t = 51, eval_x = 64, eval_y = 64; // dense evaluation grid
  std::size_t collocation = 2048;                    // PDE points per step
  real w_data = 1.0;
  real w_pde = 1.0;
};

class PinnTask final : public Task {
 public:
  explicit PinnTask(PinnTaskConfig cfg = {});

  std::string kind() const override { return "pinn"; }
  void check_model(FInrModel& model) const override;
  ad::Var loss(ad::Tape& tape, FInrModel& model, Rng& rng, NamedValues& parts) override;
  NamedValues evaluate(FInrModel& model) override;

  const DenseTensor& observations() const { return obs_; }
  const std::vector<std::vector<real>>& obs_coords() const { return obs_coords_; }
  const std::vector<std::vector<real>>& eval_coords() const { return eval_coords_; }
  const PinnTaskConfig& config() const { return cfg_; }
  // Dense (T,X,Y,3) prediction and the matching analytic reference.
  DenseTensor predict(FInrModel& model) const;
  DenseTensor reference_grid(const std::vector<std::vector<real>>& coords) const;

 private:
  PinnTaskConfig cfg_;
  DenseTensor obs_;  // (obs_t, obs_x, obs_y, 3) analytic samples
  std::vector<std::vector<real>> obs_coords_, eval_coords_;
};

}  // namespace finr
