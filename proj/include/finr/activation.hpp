#pragma once

#include <cstddef>
#include <string>

#include "finr/tensor.hpp"

namespace finr {

enum class Act { Relu, Tanh, Sine, Gabor, Finer };

// Pointwise nonlinearity plus its hyperparameters. The sine activation is the
// plain sin(z) body; its frequency enters as a pre-activation scale on the
// first layer only. Gabor and finer carry their frequencies inside the body:
//   gabor: exp(-(s0 z)^2) * sin(omega0 z)
//   finer: sin(omega0 * (|z| + 1) * z), biases initialized uniform +-bias_k
struct Activation {
  Act kind = Act::Relu;
  real omega0 = 30;
  real s0 = 10;
  real bias_k = 1;

  // Pre-activation multiplier applied to the first hidden layer.
  real first_layer_scale() const { return kind == Act::Sine ? omega0 : real(1); }
  const char* name() const;
};

Act act_from_string(const std::string& s);

// k-th derivative of the activation body at z, for k in 0..3. The backward
// pass of an order-k derivative node needs order k+1, so order-2 jets rely on
// the third derivative being available here.
real act_eval(const Activation& a, real z, int k);

}  // namespace finr
