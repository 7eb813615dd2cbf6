// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace srtask {

/// Row-major 2-D grid.
template <class T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_dims(int w, int h) const { return width == w && height == h; }
  template <class U>
  bool same_dims(const Grid<U>& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Mask = Grid<std::uint8_t>;      // values in {0, 1}
using RealGrid = Grid<double>;
using LabelGrid = Grid<std::int32_t>;

/// H x W x C real-valued image with band identifiers and ground sampling
/// distance (meters per pixel). Channels are stored planar.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, std::vector<std::string> bands, double gsd, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return static_cast<int>(bands_.size()); }
  double gsd() const { return gsd_; }
  void set_gsd(double gsd) { gsd_ = gsd; }
  bool empty() const { return pixels_.empty(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(width_) * height_; }

  const std::vector<std::string>& bands() const { return bands_; }
  void set_bands(std::vector<std::string> bands);
  // -1 when absent.
  int band_index(const std::string& band) const;

  std::span<double> band(int c) { return {pixels_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> band(int c) const { return {pixels_.data() + c * plane_size(), plane_size()}; }
  double& at(int c, int x, int y) { return pixels_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  double at(int c, int x, int y) const { return pixels_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<double>& pixels() { return pixels_; }
  const std::vector<double>& pixels() const { return pixels_; }

  const std::optional<Mask>& nodata() const { return nodata_; }
  void set_nodata(std::optional<Mask> mask);

  RealGrid band_grid(int c) const;
  void set_band(int c, const RealGrid& grid);
  // New raster holding the named bands in the given order.
  Raster select(std::span<const std::string> names) const;

  // Throws Error(Data) when any invariant is broken.
  void validate() const;

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::string> bands_;
  double gsd_ = 1.0;
  std::vector<double> pixels_;
  std::optional<Mask> nodata_;
};

}  // namespace srtask
