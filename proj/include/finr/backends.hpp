#pragma once

#include <span>
#include <string>
#include <vector>

#include "finr/activation.hpp"
#include "finr/autodiff.hpp"
#include "finr/rng.hpp"

namespace finr {

// Input featurization applied to the normalized coordinate in [-1, 1].
struct EncodingSpec {
  enum class Kind { None, Fourier, FeatureGrid };
  Kind kind = Kind::None;
  int levels = 6;     // fourier frequency count / grid level count
  int features = 2;   // features per grid level
  int base_res = 16;  // knot count of the coarsest grid level
  real growth = 1.5;  // knot-count growth per level

  int out_dim() const;
  int level_res(int level) const;  // knots at a grid level
  void validate() const;
};

EncodingSpec::Kind encoding_from_string(const std::string& s);
const char* encoding_name(EncodingSpec::Kind k);

// One univariate sub-network: encoding, hidden MLP, linear head emitting the
// axis factor rows.
struct SubNetworkSpec {
  EncodingSpec encoding;
  int hidden_layers = 3;
  int width = 64;
  Activation activation;
  int out_width = 0;  // factor width; the model fills this from mode/ranks

  void validate() const;
};

// Parameters of one axis sub-network. Weight draw order is fixed (tables by
// level, then per layer weights before bias) so a seed fully pins the init.
struct AxisNet {
  SubNetworkSpec spec;
  real dom_min = -1;
  real dom_max = 1;
  std::vector<ad::Param> tables;
  std::vector<ad::Param> weights;  // hidden layers then head
  std::vector<ad::Param> biases;

  void collect_params(std::vector<ad::Param*>& out);
};

AxisNet make_axis_net(const SubNetworkSpec& spec, real dom_min, real dom_max,
                      const std::string& name_prefix, Rng& rng);

// Value and input-derivative channels of one axis factor block, each (P, out_width).
// d1/d2 are only populated up to the requested jet order; derivatives are with
// respect to the raw (physical) coordinate, the normalization chain rule is
// applied inside.
struct AxisJets {
  ad::Var value;
  ad::Var d1;
  ad::Var d2;
};

// Evaluates the sub-network at the raw coordinates xs, carrying first and
// second input derivatives forward as separate channels when jet_order is 1
// or 2. The derivative channels are ordinary tape nodes, so any loss built
// from them backpropagates into the parameters with a single reverse sweep.
AxisJets forward_axis(ad::Tape& tape, AxisNet& net, std::span<const real> xs, int jet_order);

}  // namespace finr
