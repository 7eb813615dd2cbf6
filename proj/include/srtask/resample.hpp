// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "srtask/raster.hpp"

namespace srtask {

enum class ResampleMethod { Bicubic, Area, Nearest };

struct ResampleSpec {
  ResampleMethod method = ResampleMethod::Bicubic;
  int target_width = 0;
  int target_height = 0;
  double a = -0.5;  // Keys kernel parameter, bicubic only
  // Borders always replicate the edge pixel.
};

/// Keys cubic-convolution kernel W(x).
double keys_kernel(double x, double a = -0.5);

/// Weights for taps (i-1, i, i+1, i+2) at fractional offset t in [0, 1).
std::array<double, 4> keys_weights(double t, double a = -0.5);

Raster resample(const Raster& raster, const ResampleSpec& spec);

/// Cubic convolution with pixel-center alignment and replicate borders;
/// output values are clamped to each band's input range.
Raster bicubic_resize(const Raster& raster, int target_width, int target_height, double a = -0.5);

/// Area-weighted box averaging to any smaller (or equal) size.
Raster area_resize(const Raster& raster, int target_width, int target_height);
RealGrid area_resize(const RealGrid& grid, int target_width, int target_height);

/// Integer block mean; dims must be divisible by the factor.
RealGrid block_mean(const RealGrid& grid, int factor);

/// Box-averages to round(dims * gsd / target_gsd). Identity when the GSDs
/// match; throws when target_gsd is finer or a side ends below 4 pixels.
Raster downscale_to_gsd(const Raster& raster, double target_gsd);

/// Area-average then binarize at 0.5, ties to foreground.
Mask resize_mask(const Mask& mask, int target_width, int target_height);

/// Nearest-neighbour integer lift: every pixel becomes a factor x factor block.
template <class T>
Grid<T> lift_nearest(const Grid<T>& grid, int factor) {
  Grid<T> out(grid.width * factor, grid.height * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = grid.at(x / factor, y / factor);
  return out;
}

RealGrid gaussian_blur(const RealGrid& grid, double sigma);

/// Blur, decimate by area averaging, add Gaussian noise and clamp to [0, 1].
Raster degrade_simulate(const Raster& hr, int scale, double blur_sigma, double noise_sigma, std::uint64_t seed);

}  // namespace srtask
