#pragma once

#include <string>

#include "finr/tensor.hpp"

namespace finr {

// 8-bit non-interlaced PNG. Accepts (H,W), (H,W,1) grayscale or (H,W,3) RGB;
// values are clamped to [0,1] and quantized.
void write_png(const std::string& path, const DenseTensor& img);

// Reads 8-bit non-interlaced grayscale / gray+alpha / RGB / RGBA PNGs into
// (H,W,1) or (H,W,3) in [0,1]; alpha is dropped. All five scanline filters
// are handled. Palette and 16-bit files are refused.
DenseTensor read_png(const std::string& path);

// Pointwise |pred - truth| amplified by gain and clamped to [0,1]; the
// conventional magnified error visualization.
DenseTensor error_map(const DenseTensor& pred, const DenseTensor& truth, real gain = 8);

}  // namespace finr
