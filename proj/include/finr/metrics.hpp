#pragma once

#include "finr/tensor.hpp"

namespace finr {

// Mean squared error over all elements. Shapes must match.
real mse(const DenseTensor& pred, const DenseTensor& target);

// 10*log10(peak^2 / mse); +infinity when mse == 0 (probe with std::isinf).
real psnr(const DenseTensor& pred, const DenseTensor& target, real peak = 1.0);

struct SsimParams {
  int window = 11;
  real sigma = 1.5;
  real k1 = 0.01;
  real k2 = 0.03;
  real peak = 1.0;  // dynamic range of the inputs
};

// Mean local SSIM over Gaussian windows that lie fully inside the image
// (valid region, no padding). Accepts (H,W) or (H,W,C); channels are
// scored independently and averaged. H and W must cover the window.
real ssim(const DenseTensor& pred, const DenseTensor& target, const SsimParams& p = {});

// Occupancy overlap, occupied = value < level. Empty union -> 1.
real iou(const DenseTensor& pred, const DenseTensor& target, real level = 0.0);

}  // namespace finr
