// SPDX-License-Identifier: Apache-2.0
#include "srtask/raster.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "srtask/error.hpp"

namespace srtask {

Raster::Raster(int width, int height, std::vector<std::string> bands, double gsd, double fill)
    : width_(width), height_(height), bands_(std::move(bands)), gsd_(gsd) {
  require(width > 0 && height > 0, ErrorKind::Data, "raster dimensions must be positive");
  require(!bands_.empty(), ErrorKind::Data, "raster needs at least one band");
  pixels_.assign(plane_size() * bands_.size(), fill);
}

void Raster::set_bands(std::vector<std::string> bands) {
  require(bands.size() == bands_.size(), ErrorKind::Data, "band rename must keep the band count");
  bands_ = std::move(bands);
}

int Raster::band_index(const std::string& band) const {
  auto it = std::find(bands_.begin(), bands_.end(), band);
  return it == bands_.end() ? -1 : static_cast<int>(it - bands_.begin());
}

void Raster::set_nodata(std::optional<Mask> mask) {
  if (mask) require(mask->same_dims(width_, height_), ErrorKind::Data, "nodata mask dimensions differ from raster");
  nodata_ = std::move(mask);
}

RealGrid Raster::band_grid(int c) const {
  RealGrid g(width_, height_);
  auto src = band(c);
  std::copy(src.begin(), src.end(), g.data.begin());
  return g;
}

void Raster::set_band(int c, const RealGrid& grid) {
  require(grid.same_dims(width_, height_), ErrorKind::Data, "band grid dimensions differ from raster");
  std::copy(grid.data.begin(), grid.data.end(), band(c).begin());
}

Raster Raster::select(std::span<const std::string> names) const {
  std::vector<std::string> picked(names.begin(), names.end());
  Raster out(width_, height_, picked, gsd_);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const int src = band_index(picked[i]);
    require(src >= 0, ErrorKind::Data, "missing band " + picked[i]);
    std::copy(band(src).begin(), band(src).end(), out.band(static_cast<int>(i)).begin());
  }
  out.nodata_ = nodata_;
  return out;
}

void Raster::validate() const {
  require(width_ > 0 && height_ > 0, ErrorKind::Data, "raster dimensions must be positive");
  require(!bands_.empty(), ErrorKind::Data, "raster has no bands");
  require(std::isfinite(gsd_) && gsd_ > 0.0, ErrorKind::Data, "gsd must be positive");
  require(pixels_.size() == plane_size() * bands_.size(), ErrorKind::Data, "pixel buffer size mismatch");
  std::set<std::string> seen(bands_.begin(), bands_.end());
  require(seen.size() == bands_.size(), ErrorKind::Data, "duplicate band identifiers");
  if (nodata_) require(nodata_->same_dims(width_, height_), ErrorKind::Data, "nodata mask dimensions differ");
}

}  // namespace srtask
