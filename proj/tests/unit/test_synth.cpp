// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "srtask/error.hpp"
#include "srtask/image_io.hpp"
#include "srtask/synth.hpp"

using namespace srtask;

namespace {

int components8(const Mask& m) {
  std::vector<int> seen(m.size(), 0);
  int count = 0;
  for (int s = 0; s < static_cast<int>(m.size()); ++s) {
    if (!m.data[s] || seen[s]) continue;
    ++count;
    std::vector<int> stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = i % m.width + dx, y = i / m.width + dy;
          if (x < 0 || y < 0 || x >= m.width || y >= m.height) continue;
          const int j = y * m.width + x;
          if (m.data[j] && !seen[j]) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
    }
  }
  return count;
}

// Independent point-to-segment test: squared distance via the segment's
// normal and endpoint distances, never clamping a parameter.
bool near_segment(Point a, Point b, double px, double py, double r) {
  const double r2 = r * r;
  if ((px - a.x) * (px - a.x) + (py - a.y) * (py - a.y) <= r2) return true;
  if ((px - b.x) * (px - b.x) + (py - b.y) * (py - b.y) <= r2) return true;
  const double ux = b.x - a.x, uy = b.y - a.y;
  const double dot_a = (px - a.x) * ux + (py - a.y) * uy;
  const double dot_b = (px - b.x) * ux + (py - b.y) * uy;
  if (dot_a < 0 || dot_b > 0) return false;
  const double cross = ux * (py - a.y) - uy * (px - a.x);
  return cross * cross <= r2 * (ux * ux + uy * uy);
}

}  // namespace

TEST_CASE("empty scene has empty masks") {
  SynthSpec s;
  s.road_count = {0, 0};
  s.building_count = {0, 0};
  s.clutter_count = {0, 0};
  const SynthScene sc = generate_scene(s);
  for (auto v : sc.roads.data) CHECK(v == 0);
  for (auto v : sc.buildings.data) CHECK(v == 0);
}

TEST_CASE("generation is deterministic") {
  SynthSpec s;
  s.seed = 99;
  const SynthScene a = generate_scene(s), b = generate_scene(s);
  CHECK(a.scene.hr == b.scene.hr);
  CHECK(a.scene.lr() == b.scene.lr());
  CHECK(a.roads == b.roads);
  s.seed = 100;
  CHECK_FALSE(generate_scene(s).scene.hr == a.scene.hr);
}

TEST_CASE("scene invariants") {
  SynthSpec s;
  s.lr_count = 2;
  const SynthScene sc = generate_scene(s);
  CHECK(sc.scene.lr_images.size() == 2u);
  CHECK(sc.scene.hr.width() == 3 * sc.scene.lr().width());
  CHECK(sc.scene.lr().gsd() == doctest::Approx(10.0));
  for (double v : sc.scene.hr.pixels()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  s.width = 95;
  CHECK_THROWS_AS(generate_scene(s), Error);
}

TEST_CASE("five buildings give five components") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSpec s;
    s.seed = seed;
    s.building_count = {5, 5};
    const SynthScene sc = generate_scene(s);
    CHECK(sc.building_shapes.size() == 5u);
    CHECK(components8(sc.buildings) == 5);
  }
}

TEST_CASE("masks match an independent rasterization") {
  for (std::uint64_t seed = 11; seed < 21; ++seed) {
    SynthSpec s;
    s.seed = seed;
    const SynthScene sc = generate_scene(s);
    int mismatches = 0;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        bool road = false;
        for (const auto& r : sc.road_shapes)
          for (std::size_t i = 0; i + 1 < r.vertices.size(); ++i)
            road |= near_segment(r.vertices[i], r.vertices[i + 1], px, py, 0.5 * r.width);
        bool building = false;
        for (const auto& b : sc.building_shapes) building |= px > b.x0 && px < b.x1 && py > b.y0 && py < b.y1;
        mismatches += (sc.roads.at(x, y) != road) + (sc.buildings.at(x, y) != building);
      }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("domain B mean shift follows the configured bias") {
  SynthSpec s;
  s.shift = {1.0, 0.1, 1.0};
  double diff = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    s.seed = seed;
    const auto a = generate_scene(s, Domain::A).scene.hr.pixels();
    const auto b = generate_scene(s, Domain::B).scene.hr.pixels();
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sa += a[i];
      sb += b[i];
    }
    diff += (sb - sa) / a.size() / 5;
  }
  CHECK(diff >= 0.09);
  CHECK(diff <= 0.11);
}

TEST_CASE("corpus generation and reload") {
  testutil::TempDir tmp;
  SynthSpec s;
  s.width = s.height = 48;
  const DatasetManifest m = generate_corpus(s, 50, Domain::A, tmp.path);
  CHECK(m.scenes.size() == 50u);
  CHECK(m.ids("train").size() == 30u);
  CHECK(m.ids("val").size() == 10u);
  CHECK(m.ids("test").size() == 10u);
  const DatasetManifest back = load_manifest(tmp.path);
  CHECK_NOTHROW(validate_manifest(back));
  const Scene sc = load_scene(tmp.path, "s007");
  CHECK(sc.hr.width() == 48);
  const Mask roads = load_target_mask(tmp.path, "s007", "roads");
  CHECK(roads.width == 48);
  CHECK(std::filesystem::exists(tmp / "synth_spec.json"));
  const SynthSpec again = synth_spec_from_json(io::read_text(tmp / "synth_spec.json"));
  CHECK(again.width == 48);
}

TEST_CASE("spec json round trip and validation") {
  SynthSpec s;
  s.seed = 42;
  s.shift = {0.5, 0.2, 0.8};
  const SynthSpec back = synth_spec_from_json(synth_spec_to_json(s));
  CHECK(back.seed == 42u);
  CHECK(back.shift.gamma == 0.8);
  CHECK_THROWS_AS(synth_spec_from_json(R"({"road_width":[3]})"), Error);
  CHECK_THROWS_AS(synth_spec_from_json(R"({"scale":1})"), Error);
}

TEST_CASE("a model trained on synthetic scenes segments a held-out scene") {
  std::vector<SynthScene> scenes;
  for (std::uint64_t seed = 1; seed <= 14; ++seed) {
    SynthSpec s;
    s.seed = seed * 7919;
    scenes.push_back(generate_scene(s));
  }
  const std::span<const SynthScene> all(scenes);
  const auto train = hr_samples(all.subspan(0, 12), "roads");
  const auto held = hr_samples(all.subspan(12), "roads");
  SegTrainConfig cfg;
  cfg.arch = {3, 8, 1};
  cfg.epochs = 1;
  cfg.steps_per_epoch = 150;
  cfg.batch = 4;
  cfg.crop = 48;
  cfg.lr = 5e-3;
  const auto res = segmentation_train(train, {}, cfg);
  double iou = 0;
  for (const auto& s : held) iou += mask_iou(segmentation_infer(res.model, s.image).binary, s.mask) / held.size();
  MESSAGE("held-out road IoU " << iou);
  CHECK(iou >= 0.5);
}
