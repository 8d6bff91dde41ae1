#include "finr/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "finr/errors.hpp"

namespace finr {

namespace {

void require_same_shape(const DenseTensor& a, const DenseTensor& b, const char* who) {
  if (a.extents() != b.extents())
    throw ShapeError(std::string(who) + ": shape mismatch");
}

std::vector<real> gauss_kernel(int w, real sigma) {
  std::vector<real> g(static_cast<std::size_t>(w));
  const real c = real(w - 1) / 2;
  real s = 0;
  for (int i = 0; i < w; ++i) {
    const real d = real(i) - c;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (real& v : g) v /= s;
  return g;
}

// Valid-region separable blur of an H x W plane: output (H-w+1) x (W-w+1).
DenseTensor blur_valid(const DenseTensor& plane, const std::vector<real>& k) {
  const std::size_t h = plane.extent(0), w = plane.extent(1);
  const std::size_t kw = k.size();
  const std::size_t oh = h - kw + 1, ow = w - kw + 1;
  DenseTensor rows({h, ow});  // horizontal pass first
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      real acc = 0;
      for (std::size_t q = 0; q < kw; ++q) acc += k[q] * plane[i * w + j + q];
      rows[i * ow + j] = acc;
    }
  DenseTensor out({oh, ow});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      real acc = 0;
      for (std::size_t q = 0; q < kw; ++q) acc += k[q] * rows[(i + q) * ow + j];
      out[i * ow + j] = acc;
    }
  return out;
}

// Channel c of an (H,W) or (H,W,C) tensor as a standalone plane.
DenseTensor take_plane(const DenseTensor& t, std::size_t c) {
  const std::size_t h = t.extent(0), w = t.extent(1);
  if (t.order() == 2) return t;
  const std::size_t nc = t.extent(2);
  DenseTensor p({h, w});
  for (std::size_t i = 0; i < h * w; ++i) p[i] = t[i * nc + c];
  return p;
}

real ssim_plane(const DenseTensor& x, const DenseTensor& y, const SsimParams& p) {
  const std::vector<real> k = gauss_kernel(p.window, p.sigma);
  const std::size_t h = x.extent(0), w = x.extent(1);
  DenseTensor xx({h, w}), yy({h, w}), xy({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const DenseTensor mx = blur_valid(x, k), my = blur_valid(y, k);
  const DenseTensor mxx = blur_valid(xx, k), myy = blur_valid(yy, k), mxy = blur_valid(xy, k);
  const real c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const real c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  real acc = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const real ux = mx[i], uy = my[i];
    const real vx = mxx[i] - ux * ux;
    const real vy = myy[i] - uy * uy;
    const real cv = mxy[i] - ux * uy;
    acc += ((2 * ux * uy + c1) * (2 * cv + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return acc / real(mx.size());
}

}  // namespace

real mse(const DenseTensor& pred, const DenseTensor& target) {
  require_same_shape(pred, target, "mse");
  real acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const real d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / real(pred.size());
}

real psnr(const DenseTensor& pred, const DenseTensor& target, real peak) {
  const real e = mse(pred, target);
  if (e == 0) return std::numeric_limits<real>::infinity();
  return 10 * std::log10(peak * peak / e);
}

real ssim(const DenseTensor& pred, const DenseTensor& target, const SsimParams& p) {
  require_same_shape(pred, target, "ssim");
  if (pred.order() != 2 && pred.order() != 3)
    throw ShapeError("ssim: expected (H,W) or (H,W,C), got order " + std::to_string(pred.order()));
  if (p.window < 1 || p.sigma <= 0) throw ShapeError("ssim: bad window parameters");
  const std::size_t h = pred.extent(0), w = pred.extent(1);
  if (h < static_cast<std::size_t>(p.window) || w < static_cast<std::size_t>(p.window))
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than the " + std::to_string(p.window) + "-pixel window");
  const std::size_t channels = pred.order() == 3 ? pred.extent(2) : 1;
  real acc = 0;
  for (std::size_t c = 0; c < channels; ++c)
    acc += ssim_plane(take_plane(pred, c), take_plane(target, c), p);
  return acc / real(channels);
}

real iou(const DenseTensor& pred, const DenseTensor& target, real level) {
  require_same_shape(pred, target, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] < level;
    const bool b = target[i] < level;
    inter += static_cast<std::size_t>(a && b);
    uni += static_cast<std::size_t>(a || b);
  }
  if (uni == 0) return 1;
  return real(inter) / real(uni);
}

}  // namespace finr
