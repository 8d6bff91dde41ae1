#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "finr/tensor.hpp"

namespace finr {

enum class Mode { CP, TT, TU };

Mode mode_from_string(const std::string& s);
const char* mode_name(Mode m);

// A factorized signal: per-axis factors plus a channel mixer (CP/TT) or a
// dense core (TU). Layouts:
//   CP: d factors (N_k, R),              mix (R, C)
//   TU: d factors (N_k, R_k),            mix = core (R_1, ..., R_d, C)
//   TT: head (N_1, R_1),
//       interior k in [2, d-1]: order-3 core (R_{k-1}, N_k, R_k),
//       tail (N_d, R_{d-1}),             mix (R_{d-1}, C)
//
// TT index convention (matched by the reference kernel and the tests):
//   out[i_1..i_d, c] = sum over r_1..r_{d-1} of
//     head[i_1, r_1] * prod_k core_k[r_{k-1}, i_k, r_k] * tail[i_d, r_{d-1}] * mix[r_{d-1}, c]
// i.e. the tail row is weighted elementwise on the last bond rank, then the
// channel mixer contracts that rank. For d = 2 this reduces exactly to CP.
struct FactorSet {
  Mode mode = Mode::CP;
  std::size_t channels = 1;
  std::vector<std::size_t> ranks;  // CP: {R}; TT: {R_1..R_{d-1}}; TU: {R_1..R_d}
  std::vector<DenseTensor> factors;
  DenseTensor mix;

  int d() const { return static_cast<int>(factors.size()); }
  // Spatial extent of axis k regardless of factor layout.
  std::size_t axis_extent(int k) const;
  void validate() const;  // throws ShapeError with a narrative message
};

// Full grid composition, output (N_1, ..., N_d, C).
DenseTensor compose(const FactorSet& fs);
DenseTensor cp_compose(const FactorSet& fs);
DenseTensor tt_compose(const FactorSet& fs);
DenseTensor tucker_compose(const FactorSet& fs);

// Brute-force composition straight from the definition. Shares nothing with
// the fast kernels beyond DenseTensor; this is the correctness oracle.
DenseTensor reference_compose(const FactorSet& fs);

// Single-point contraction. rows per axis: CP/TU a rank vector (R_k); TT a
// head row (R_1), interior slice matrices (R_{k-1}, R_k), tail row (R_{d-1}).
// Returns the channel vector (C).
DenseTensor contract_point(const FactorSet& fs, const std::vector<DenseTensor>& rows);

// Widths of the per-axis factor matrices in flat "network" layout, where a
// TT interior core is carried as (N_k, R_{k-1} * R_k) with the leading rank
// major. The grid/rows entry points below take this layout.
std::vector<std::size_t> factor_widths(Mode mode, int d, const std::vector<std::size_t>& ranks);

// Assemble a FactorSet from network-layout matrices (TT interiors reshaped).
FactorSet factors_from_mats(Mode mode, std::size_t channels, const std::vector<std::size_t>& ranks,
                            const std::vector<DenseTensor>& mats, const DenseTensor& mix);

DenseTensor compose_grid(Mode mode, std::size_t channels, const std::vector<std::size_t>& ranks,
                         const std::vector<DenseTensor>& mats, const DenseTensor& mix);

struct ComposeGrads {
  std::vector<DenseTensor> mats;  // same shapes as the inputs
  DenseTensor mix;
};

ComposeGrads compose_grid_backward(Mode mode, std::size_t channels,
                                   const std::vector<std::size_t>& ranks,
                                   const std::vector<DenseTensor>& mats, const DenseTensor& mix,
                                   const DenseTensor& gbar);

// Batched point contraction: rows[k] is (P, width_k) in network layout; the
// output is (P, C). Row p composes the signal at one point whose per-axis
// factor rows are rows[k][p, :].
DenseTensor compose_rows(Mode mode, std::size_t channels, const std::vector<std::size_t>& ranks,
                         const std::vector<DenseTensor>& rows, const DenseTensor& mix);

ComposeGrads compose_rows_backward(Mode mode, std::size_t channels,
                                   const std::vector<std::size_t>& ranks,
                                   const std::vector<DenseTensor>& rows, const DenseTensor& mix,
                                   const DenseTensor& gbar);

}  // namespace finr
