#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finr/backends.hpp"
#include "finr/compose.hpp"

namespace finr {

struct AxisSpec {
  real dom_min = -1;
  real dom_max = 1;
  SubNetworkSpec net;
};

// Full factorized model description. Per-axis factor widths are derived from
// mode and ranks; a nonzero out_width in an axis spec must agree with them.
struct FInrSpec {
  Mode mode = Mode::CP;
  std::size_t channels = 1;
  std::vector<std::size_t> ranks;
  std::vector<AxisSpec> axes;

  int d() const { return static_cast<int>(axes.size()); }
  void validate() const;
};

// d univariate sub-networks plus the channel mixer / core. A seed pins every
// weight: axis nets are initialized in order, then the mixer.
class FInrModel {
 public:
  FInrModel(FInrSpec spec, std::uint64_t seed);

  const FInrSpec& spec() const { return spec_; }
  int d() const { return spec_.d(); }
  std::vector<AxisNet>& axes() { return axes_; }
  ad::Param& mixer() { return mixer_; }

  // Stable flat parameter list: axis 0 params, axis 1 params, ..., mixer.
  std::vector<ad::Param*> params();
  std::size_t param_count();

  struct GridEval {
    ad::Var value;            // (N_1, ..., N_d, C)
    std::vector<ad::Var> d1;  // per-axis first partials of every channel
    std::vector<ad::Var> d2;  // per-axis second partials
  };
  // One sub-network pass per axis over its coordinate list, composed to the
  // full grid: N*d network evaluations cover N^d points. Derivative grids
  // reuse the same per-axis forwards, swapping one factor block at a time.
  GridEval eval_grid_nodes(ad::Tape& tape, const std::vector<std::vector<real>>& axis_coords,
                           int jet_order);
  DenseTensor eval_grid(const std::vector<std::vector<real>>& axis_coords);

  struct PointsEval {
    ad::Var value;            // (P, C)
    std::vector<ad::Var> d1;  // (P, C) per axis
    std::vector<ad::Var> d2;
  };
  PointsEval eval_points_nodes(ad::Tape& tape, const DenseTensor& pts, int jet_order);
  DenseTensor eval_points(const DenseTensor& pts);

  // Per-axis factor blocks at the given coordinate lists, for callers that
  // compose on their own (batched training gathers rows from these).
  std::vector<AxisJets> axis_forward(ad::Tape& tape,
                                     const std::vector<std::vector<real>>& axis_coords,
                                     int jet_order);

  // Compose already-gathered per-axis factor rows (one row per point) into
  // a (P, C) prediction. rows[k] must be (P, factor_width_k).
  ad::Var compose_batch(ad::Tape& tape, const std::vector<ad::Var>& rows);

  // Throws CapabilityError when the requested jet order is not served.
  void check_jet_support(int jet_order) const;

 private:
  void check_domain(int axis, real x) const;

  FInrSpec spec_;
  std::vector<AxisNet> axes_;
  ad::Param mixer_;
};

// Plain MLP over the joint d-dimensional input; the scaling baseline.
struct MonolithicSpec {
  std::vector<AxisSpec> axes;  // encodings ignored beyond validation; inputs are normalized coords
  std::size_t channels = 1;
  int hidden_layers = 3;
  int width = 64;
  Activation activation;
};

class MonolithicModel {
 public:
  MonolithicModel(MonolithicSpec spec, std::uint64_t seed);
  const MonolithicSpec& spec() const { return spec_; }
  std::vector<ad::Param*> params();
  std::size_t param_count();
  // (P, C) from raw points (P, d); order-0 only.
  ad::Var forward(ad::Tape& tape, const DenseTensor& pts);

 private:
  MonolithicSpec spec_;
  std::vector<ad::Param> weights_, biases_;
};

// Training-cost model per step on an n^d grid: sub-network term plus
// composition term, in fused multiply-adds up to a shared constant.
struct ComplexityEstimate {
  double network = 0;  // per-step sub-network cost
  double compose = 0;  // per-step composition cost
  double total() const { return network + compose; }
};

// m: hidden width, l: hidden layer count, n: per-axis grid extent, r: rank.
// The monolithic row ignores r.
ComplexityEstimate predict_cost(const std::string& model_kind, int d, std::size_t n, std::size_t m,
                                std::size_t l, std::size_t r);

}  // namespace finr
