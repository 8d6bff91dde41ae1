#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "finr/activation.hpp"
#include "finr/compose.hpp"
#include "finr/tensor.hpp"

namespace finr::ad {

// A trainable tensor. Gradients accumulate across backward calls until
// zero_grad (the optimizer zeroes them after each step).
struct Param {
  std::string name;
  DenseTensor value;
  DenseTensor grad;

  Param() = default;
  Param(std::string n, DenseTensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.extents()) {}
  void zero_grad() { grad.fill(0); }
};

class Tape;

// Handle to a tape node. Only valid for the tape that produced it, until the
// next reset.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense-tensor operations. Nodes are recorded in
// program order; backward walks them in exact reverse, so gradient
// accumulation order is deterministic for a fixed graph.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var constant(DenseTensor v);
  Var leaf(Param& p);  // p must outlive the tape's current graph

  // Elementwise; shapes must match exactly (no broadcasting).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, real s);
  Var add_scalar(Var a, real s);
  Var abs(Var a);
  Var sqrt(Var a);  // domain is the caller's responsibility; guard with add_scalar

  // Linear algebra.
  Var matmul(Var a, Var b);                  // (m,k) x (k,n)
  Var add_rowvec(Var m, Var row);            // (p,n) + (n,) broadcast over rows
  Var sigma(Var z, const Activation& act, int order);  // pointwise act derivative

  // Reductions to a scalar node of shape (1,).
  Var sum(Var a);
  Var mean(Var a);
  // mean(a*a) without materializing the squared tensor; the workhorse of the
  // quadratic losses, where a can be grid-sized.
  Var mean_sq(Var a);

  // Row selection and two-point row blending (feature-grid interpolation).
  Var gather_rows(Var m, std::vector<std::size_t> rows);
  Var blend_rows(Var table, std::vector<std::size_t> i0, std::vector<real> w0,
                 std::vector<std::size_t> i1, std::vector<real> w1);
  // Concatenate matrices with equal row counts along columns.
  Var concat_cols(const std::vector<Var>& parts);
  // Same data, new extents (row-major layout is preserved).
  Var reshape(Var a, std::vector<std::size_t> extents);

  // Factorized composition over the full grid / over batched point rows.
  Var compose_grid(Mode mode, std::size_t channels, std::vector<std::size_t> ranks,
                   const std::vector<Var>& mats, Var mix);
  Var compose_rows(Mode mode, std::size_t channels, std::vector<std::size_t> ranks,
                   const std::vector<Var>& rows, Var mix);

  const DenseTensor& value(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss; flushes leaf gradients into their
  // Params. Branches that do not feed the loss contribute nothing. Each call
  // re-seeds the sweep, so calling twice doubles the parameter gradients.
  void backward(Var loss);

  // Drop all nodes, keeping registered Params untouched.
  void reset();

 private:
  struct Node {
    DenseTensor value;
    DenseTensor grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::function<void(Tape&, const DenseTensor&)> back;  // nullptr on leaves
    Param* param = nullptr;
  };

  Var push(DenseTensor value, bool needs_grad,
           std::function<void(Tape&, const DenseTensor&)> back, Param* param = nullptr);
  Node& node(Var v);
  const Node& node(Var v) const;
  void add_grad(Var v, const DenseTensor& g);
  void add_grad_scaled(Var v, const DenseTensor& g, real s);

  std::vector<Node> nodes_;
};

// Compares analytic parameter gradients of build's scalar loss against
// central differences. build must construct the loss from the given params
// on the supplied tape each time it is called. probes_per_param < 0 checks
// every entry; otherwise a deterministic subsample of that size.
struct GradCheckReport {
  real max_rel_err = 0;
  std::size_t probes = 0;
  std::string worst_param;
};

GradCheckReport grad_check(const std::function<Var(Tape&)>& build, std::span<Param* const> params,
                           real h = 1e-5, int probes_per_param = -1);

}  // namespace finr::ad
