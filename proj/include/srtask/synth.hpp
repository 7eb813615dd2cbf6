// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "srtask/scene_store.hpp"
#include "srtask/tasks.hpp"

namespace srtask {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct DomainShift {
  double gain = 1.0;
  double bias = 0.0;
  double gamma = 1.0;  // histogram warp v -> v^gamma applied before gain/bias
};

/// Procedural scene parameters. Sizes are HR pixels.
struct SynthSpec {
  int width = 96;
  int height = 96;
  int scale = 3;
  double hr_gsd = 10.0 / 3.0;
  std::vector<std::string> bands = {"B02", "B03", "B04", "B08"};

  Range road_count{1, 3};
  Range road_width{4, 8};
  Range building_count{2, 6};
  Range building_size{6, 14};
  int building_gap = 2;
  // Thin dark linear features that are not roads.
  Range clutter_count{1, 3};
  Range clutter_width{1, 2};

  double texture_amplitude = 0.05;
  double texture_scale = 8.0;
  double hr_noise = 0.01;

  DomainShift shift{0.6, 0.25, 0.7};  // applied to domain B only
  double blur_sigma = 1.0;            // HR pixels, before decimation
  double lr_noise = 0.01;
  int lr_count = 1;
  std::uint64_t seed = 1;

  // Train / val fractions of a corpus; the remainder is test.
  double train_fraction = 0.6;
  double val_fraction = 0.2;
};

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);
// Throws Error(Usage) on an inconsistent spec.
void validate_spec(const SynthSpec& spec);

enum class Domain { A, B };

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct RoadShape {
  std::vector<Point> vertices;
  double width = 0.0;
};

struct RectShape {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel bounds
};

struct SynthScene {
  Scene scene;
  Mask roads;
  Mask buildings;
  std::vector<RoadShape> road_shapes;
  std::vector<RoadShape> clutter_shapes;
  std::vector<RectShape> building_shapes;
};

/// Distance from (px, py) to the polyline.
double polyline_distance(const std::vector<Point>& line, double px, double py);

SynthScene generate_scene(const SynthSpec& spec, Domain domain = Domain::A, const std::string& id = "s000");

/// Applies the radiometric shift in place (clamped to [0, 1]).
void apply_domain_shift(Raster& raster, const DomainShift& shift);

/// Writes n scenes plus masks under `root` and returns the saved manifest.
/// Scene i of domain A and domain B share geometry.
DatasetManifest generate_corpus(const SynthSpec& spec, int n_scenes, Domain domain, const std::filesystem::path& root);

/// `root/<id>/masks/<target>.png`
Mask load_target_mask(const std::filesystem::path& root, const std::string& id, const std::string& target);

/// Builds (HR image, mask) training pairs for the named target.
std::vector<SegSample> hr_samples(std::span<const SynthScene> scenes, const std::string& target);

}  // namespace srtask
