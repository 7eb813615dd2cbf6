// SPDX-License-Identifier: Apache-2.0
#include "srtask/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "srtask/error.hpp"
#include "srtask/rng.hpp"

namespace srtask {
namespace {

struct Tap {
  int index;
  double weight;
};

// For each output coordinate, the source taps and weights along one axis.
using AxisTaps = std::vector<std::vector<Tap>>;

AxisTaps cubic_taps(int in, int out, double a) {
  AxisTaps taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * ratio - 0.5;
    const double fl = std::floor(src);
    const int i = static_cast<int>(fl);
    const auto w = keys_weights(src - fl, a);
    for (int k = 0; k < 4; ++k) taps[o].push_back({std::clamp(i - 1 + k, 0, in - 1), w[k]});
  }
  return taps;
}

AxisTaps area_taps(int in, int out) {
  AxisTaps taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * ratio;
    const double hi = (o + 1) * ratio;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(in - 1, static_cast<int>(std::ceil(hi)) - 1);
    double total = 0.0;
    for (int i = first; i <= last; ++i) {
      const double w = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (w > 0.0) {
        taps[o].push_back({i, w});
        total += w;
      }
    }
    for (auto& t : taps[o]) t.weight /= total;
  }
  return taps;
}

AxisTaps nearest_taps(int in, int out) {
  AxisTaps taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const int i = std::clamp(static_cast<int>(std::floor((o + 0.5) * ratio)), 0, in - 1);
    taps[o].push_back({i, 1.0});
  }
  return taps;
}

// Separable filter: horizontal pass, then vertical. Sums run in tap order so
// results do not depend on scheduling.
std::vector<double> separable(std::span<const double> src, int w, int h, const AxisTaps& xt, const AxisTaps& yt) {
  const int ow = static_cast<int>(xt.size());
  const int oh = static_cast<int>(yt.size());
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    const double* row = src.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (const auto& t : xt[x]) acc += t.weight * row[t.index];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (const auto& t : yt[y]) acc += t.weight * tmp[static_cast<std::size_t>(t.index) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

Raster apply_taps(const Raster& raster, const AxisTaps& xt, const AxisTaps& yt, bool clamp_to_input) {
  const int ow = static_cast<int>(xt.size());
  const int oh = static_cast<int>(yt.size());
  const double gsd = raster.gsd() * static_cast<double>(raster.width()) / ow;
  Raster out(ow, oh, raster.bands(), gsd);
  for (int c = 0; c < raster.channels(); ++c) {
    auto src = raster.band(c);
    auto res = separable(src, raster.width(), raster.height(), xt, yt);
    if (clamp_to_input) {
      const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
      for (double& v : res) v = std::clamp(v, *lo, *hi);
    }
    std::copy(res.begin(), res.end(), out.band(c).begin());
  }
  if (raster.nodata()) {
    const Mask& nd = *raster.nodata();
    Mask m(ow, oh);
    const auto nx = nearest_taps(raster.width(), ow);
    const auto ny = nearest_taps(raster.height(), oh);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) m.at(x, y) = nd.at(nx[x][0].index, ny[y][0].index);
    out.set_nodata(std::move(m));
  }
  return out;
}

void check_target(int w, int h) {
  require(w >= 1 && h >= 1, ErrorKind::Usage, "target dimensions must be at least 1");
}

}  // namespace

double keys_kernel(double x, double a) {
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

std::array<double, 4> keys_weights(double t, double a) {
  std::array<double, 4> w = {keys_kernel(t + 1.0, a), keys_kernel(t, a), keys_kernel(1.0 - t, a),
                             keys_kernel(2.0 - t, a)};
  const double sum = w[0] + w[1] + w[2] + w[3];
  for (double& v : w) v /= sum;
  return w;
}

Raster resample(const Raster& raster, const ResampleSpec& spec) {
  switch (spec.method) {
    case ResampleMethod::Bicubic: return bicubic_resize(raster, spec.target_width, spec.target_height, spec.a);
    case ResampleMethod::Area: return area_resize(raster, spec.target_width, spec.target_height);
    case ResampleMethod::Nearest:
      check_target(spec.target_width, spec.target_height);
      require(!raster.empty(), ErrorKind::Data, "cannot resample an empty raster");
      return apply_taps(raster, nearest_taps(raster.width(), spec.target_width),
                        nearest_taps(raster.height(), spec.target_height), false);
  }
  fail(ErrorKind::Usage, "unknown resample method");
}

Raster bicubic_resize(const Raster& raster, int target_width, int target_height, double a) {
  check_target(target_width, target_height);
  require(!raster.empty(), ErrorKind::Data, "cannot resample an empty raster");
  return apply_taps(raster, cubic_taps(raster.width(), target_width, a),
                    cubic_taps(raster.height(), target_height, a), true);
}

Raster area_resize(const Raster& raster, int target_width, int target_height) {
  check_target(target_width, target_height);
  require(!raster.empty(), ErrorKind::Data, "cannot resample an empty raster");
  return apply_taps(raster, area_taps(raster.width(), target_width), area_taps(raster.height(), target_height),
                    true);
}

RealGrid area_resize(const RealGrid& grid, int target_width, int target_height) {
  check_target(target_width, target_height);
  RealGrid out(target_width, target_height);
  out.data = separable(grid.data, grid.width, grid.height, area_taps(grid.width, target_width),
                       area_taps(grid.height, target_height));
  return out;
}

RealGrid block_mean(const RealGrid& grid, int factor) {
  require(factor >= 1 && grid.width % factor == 0 && grid.height % factor == 0, ErrorKind::Data,
          "grid dims not divisible by block factor");
  RealGrid out(grid.width / factor, grid.height / factor);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) acc += grid.at(x * factor + dx, y * factor + dy);
      out.at(x, y) = acc * inv;
    }
  return out;
}

Raster downscale_to_gsd(const Raster& raster, double target_gsd) {
  require(!raster.empty(), ErrorKind::Data, "cannot downscale an empty raster");
  require(target_gsd > 0.0, ErrorKind::Usage, "target gsd must be positive");
  if (std::abs(target_gsd - raster.gsd()) <= 1e-12 * raster.gsd()) return raster;
  require(target_gsd > raster.gsd(), ErrorKind::Usage, "target gsd must be coarser than the source gsd");
  const double f = raster.gsd() / target_gsd;
  const int w = static_cast<int>(std::lround(raster.width() * f));
  const int h = static_cast<int>(std::lround(raster.height() * f));
  require(w >= 4 && h >= 4, ErrorKind::Data,
          "downscaled size " + std::to_string(w) + "x" + std::to_string(h) + " is below 4 pixels");
  return area_resize(raster, w, h);
}

Mask resize_mask(const Mask& mask, int target_width, int target_height) {
  check_target(target_width, target_height);
  RealGrid g(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.size(); ++i) g.data[i] = mask.data[i] ? 1.0 : 0.0;
  const RealGrid a = area_resize(g, target_width, target_height);
  Mask out(target_width, target_height);
  // Slack for rounding in the weight normalization so exact 0.5 means tie.
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] >= 0.5 - 1e-12 ? 1 : 0;
  return out;
}

RealGrid gaussian_blur(const RealGrid& grid, double sigma) {
  if (sigma <= 0.0) return grid;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  auto make = [&](int n) {
    AxisTaps taps(n);
    for (int o = 0; o < n; ++o)
      for (int i = -radius; i <= radius; ++i) taps[o].push_back({std::clamp(o + i, 0, n - 1), k[i + radius]});
    return taps;
  };
  RealGrid out(grid.width, grid.height);
  out.data = separable(grid.data, grid.width, grid.height, make(grid.width), make(grid.height));
  return out;
}

Raster degrade_simulate(const Raster& hr, int scale, double blur_sigma, double noise_sigma, std::uint64_t seed) {
  require(scale >= 2, ErrorKind::Usage, "degradation scale must be at least 2");
  require(hr.width() % scale == 0 && hr.height() % scale == 0, ErrorKind::Data,
          "HR dims must be divisible by the scale");
  Rng rng(seed);
  Raster lr(hr.width() / scale, hr.height() / scale, hr.bands(), hr.gsd() * scale);
  for (int c = 0; c < hr.channels(); ++c) {
    const RealGrid low = block_mean(gaussian_blur(hr.band_grid(c), blur_sigma), scale);
    auto dst = lr.band(c);
    for (std::size_t i = 0; i < low.size(); ++i) {
      const double noise = noise_sigma > 0.0 ? noise_sigma * rng.normal() : 0.0;
      dst[i] = std::clamp(low.data[i] + noise, 0.0, 1.0);
    }
  }
  return lr;
}

}  // namespace srtask
