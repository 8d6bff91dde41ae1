#include "finr/activation.hpp"

#include <cmath>

#include "finr/errors.hpp"

namespace finr {

const char* Activation::name() const {
  switch (kind) {
    case Act::Relu: return "relu";
    case Act::Tanh: return "tanh";
    case Act::Sine: return "sine";
    case Act::Gabor: return "gabor";
    case Act::Finer: return "finer";
  }
  return "?";
}

Act act_from_string(const std::string& s) {
  if (s == "relu") return Act::Relu;
  if (s == "tanh") return Act::Tanh;
  if (s == "sine") return Act::Sine;
  if (s == "gabor") return Act::Gabor;
  if (s == "finer") return Act::Finer;
  throw ConfigError("unknown activation '" + s + "' (expected relu, tanh, sine, gabor, or finer)");
}

namespace {

inline real sign0(real z) { return z > 0 ? real(1) : (z < 0 ? real(-1) : real(0)); }

}  // namespace

real act_eval(const Activation& a, real z, int k) {
  if (k < 0 || k > 3) throw CapabilityError("activation derivatives are available up to order 3");
  switch (a.kind) {
    case Act::Relu:
      switch (k) {
        case 0: return z > 0 ? z : 0;
        case 1: return z > 0 ? real(1) : real(0);
        default: return 0;
      }
    case Act::Tanh: {
      const real t = std::tanh(z);
      switch (k) {
        case 0: return t;
        case 1: return 1 - t * t;
        case 2: return -2 * t * (1 - t * t);
        default: return (-2 + 6 * t * t) * (1 - t * t);
      }
    }
    case Act::Sine:
      switch (k) {
        case 0: return std::sin(z);
        case 1: return std::cos(z);
        case 2: return -std::sin(z);
        default: return -std::cos(z);
      }
    case Act::Gabor: {
      const real w = a.omega0, s2 = a.s0 * a.s0;
      const real e = std::exp(-s2 * z * z);
      const real sn = std::sin(w * z), cs = std::cos(w * z);
      switch (k) {
        case 0: return e * sn;
        case 1: return e * (w * cs - 2 * s2 * z * sn);
        case 2: return e * (-w * w * sn - 4 * w * s2 * z * cs + 2 * s2 * (2 * s2 * z * z - 1) * sn);
        default:
          return e * (-w * w * w * cs + 6 * w * w * s2 * z * sn +
                      6 * w * s2 * (2 * s2 * z * z - 1) * cs -
                      4 * s2 * s2 * z * (2 * s2 * z * z - 3) * sn);
      }
    }
    case Act::Finer: {
      // g(z) = (|z| + 1) z with g' = 2|z| + 1, g'' = 2 sign(z), g''' = 0;
      // the derivative at the origin takes sign(0) = 0.
      const real w = a.omega0;
      const real g = (std::abs(z) + 1) * z;
      const real g1 = 2 * std::abs(z) + 1;
      const real g2 = 2 * sign0(z);
      const real u = w * g;
      const real sn = std::sin(u), cs = std::cos(u);
      switch (k) {
        case 0: return sn;
        case 1: return w * g1 * cs;
        case 2: return w * g2 * cs - w * w * g1 * g1 * sn;
        default: return -3 * w * w * g1 * g2 * sn - w * w * w * g1 * g1 * g1 * cs;
      }
    }
  }
  return 0;
}

}  // namespace finr
