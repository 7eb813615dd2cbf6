// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srtask/raster.hpp"

namespace srtask {

/// Band names and GSD for formats that do not carry them (PNG). Read from a
/// `<file>.json` sidecar or supplied by the scene's meta.json.
struct RasterMeta {
  double gsd = 0.0;
  std::vector<std::string> bands;
};

/// Loads a PNG (8/16-bit, 1..4 channels), a native `.raw` file, or a
/// directory holding one single-band file per band (`<band>.png|.raw`).
/// Integer samples become reals without rescaling. An empty `bands` keeps
/// every band in file order.
Raster load_raster(const std::filesystem::path& path, std::span<const std::string> bands = {},
                   const std::optional<RasterMeta>& meta = std::nullopt);

/// `.raw` writes the native float32 container; `.png` quantizes (round and
/// clamp) to the requested bit depth and writes a gsd/bands sidecar.
void save_raster(const Raster& raster, const std::filesystem::path& path, int png_bit_depth = 16);

std::vector<std::uint8_t> encode_raw(const Raster& raster);
Raster decode_raw(std::span<const std::uint8_t> bytes);

Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

/// Linear-interpolated percentile over the sorted values (p in [0, 100]).
double percentile(std::vector<double> values, double p);

struct BandNormalization {
  double low = 0.0;   // value at p_low
  double high = 0.0;  // value at p_high
  double gain = 0.0;
  double offset = 0.0;
  bool degenerate = false;
};

struct NormalizedRaster {
  Raster raster;
  std::vector<BandNormalization> bands;
};

/// Per band, maps the p_low percentile to 0 and p_high to 1, clamped. A band
/// whose two percentiles coincide is flagged and set to 0.5.
NormalizedRaster normalize_radiometry(const Raster& raster, double p_low = 1.0, double p_high = 99.0);

/// One region of interest: LR observations, one HR reference and the integer
/// scale between them.
struct Scene {
  std::string id;
  std::vector<Raster> lr_images;
  Raster hr;
  int scale = 0;
  // Index into lr_images used by the evaluation branches.
  std::size_t reference_lr = 0;

  const Raster& lr() const { return lr_images.at(reference_lr); }
  void validate() const;
};

/// RGB composite (B04, B03, B02) normalized with the default percentiles.
Raster compose_rgb(const Raster& raster);
Raster compose_rgb(const Scene& scene);

struct SceneMeta {
  double gsd_lr = 0.0;
  double gsd_hr = 0.0;
  int scale = 0;
  std::vector<std::string> bands;
  // DN = reflectance * quantification; loaders divide by it. 1 means raw DN.
  double quantification = 1.0;
};

SceneMeta load_scene_meta(const std::filesystem::path& scene_dir);

/// Reads `root/<id>/{lr/*.png|raw, hr.png|raw, meta.json}`. The LR list is
/// sorted by filename; the reference LR is the first one.
Scene load_scene(const std::filesystem::path& root, const std::string& id, std::span<const std::string> bands = {});
void save_scene(const Scene& scene, const std::filesystem::path& root, double quantification = 1.0,
                int png_bit_depth = 16);

struct ManifestEntry {
  std::string id;
  std::string split = "train";  // train | val | test

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> bands;
  std::vector<ManifestEntry> scenes;
  std::string provenance;

  std::vector<std::string> ids(const std::string& split = "") const;
};

DatasetManifest load_manifest(const std::filesystem::path& root);
void save_manifest(const DatasetManifest& manifest);
// Checks id uniqueness and that every listed scene loads and validates.
void validate_manifest(const DatasetManifest& manifest);

}  // namespace srtask
