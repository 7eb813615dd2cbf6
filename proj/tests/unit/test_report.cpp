// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "helpers.hpp"
#include "srtask/error.hpp"
#include "srtask/image_io.hpp"
#include "srtask/report.hpp"
#include "srtask/resample.hpp"
#include "srtask/rng.hpp"
#include "srtask/synth.hpp"

using namespace srtask;
namespace fs = std::filesystem;

namespace {

// Dataset directory that passes validate_run_config.
fs::path fake_dataset(const testutil::TempDir& dir) {
  const fs::path root = dir / "data";
  fs::create_directories(root);
  io::write_text(root / "manifest.json", "{}");
  return root;
}

Scene textured_scene(int w, int scale) {
  Raster hr(w, w, {"B08"}, 1.0);
  Rng rng(5);
  for (int y = 0; y < w; ++y)
    for (int x = 0; x < w; ++x)
      hr.at(0, x, y) = 0.5 + 0.2 * std::sin(x * 0.3) * std::cos(y * 0.23) + 0.05 * rng.normal();
  for (double& v : hr.pixels()) v = std::clamp(v, 0.0, 1.0);
  Scene s;
  s.id = "tex";
  s.hr = hr;
  s.scale = scale;
  Raster lr = area_resize(hr, w / scale, w / scale);
  lr.set_gsd(scale);
  s.lr_images = {lr};
  return s;
}

// Independent ring test: pixel distance to the rounded centre rounds to r.
bool ring_oracle(int px, int py, double cx, double cy, int r) {
  const double d = std::hypot(px - std::round(cx), py - std::round(cy));
  return static_cast<int>(std::round(d)) == r;
}

}  // namespace

TEST_CASE("run config parsing, defaults and hash") {
  testutil::TempDir dir;
  const fs::path data = fake_dataset(dir);
  io::write_text(dir / "m.json", "{}");
  const std::string text = R"({"dataset": "data",
    "tasks": [{"kind": "segmentation", "model": "m.json", "bands": ["B08"]}, {"kind": "keypoints"},
              {"kind": "keypoints", "n_keypoints": 50}],
    "adapt_modes": ["none", "dataset_wise"],
    "thresholds": {"theta": 0.7, "epsilon_px": 2, "mask": 0.4},
    "sr": {"weights": {"alpha": 1, "beta": 0.2, "gamma": 0}, "space": "feature"},
    "seed": 9, "colour": "blue"})";
  const RunConfig c = parse_run_config(text, dir.path);
  CHECK(c.dataset == data);
  REQUIRE(c.tasks.size() == 3);
  CHECK(c.tasks[0].id == "segmentation");
  CHECK(c.tasks[0].model == dir / "m.json");
  CHECK(c.tasks[1].id == "keypoints");
  CHECK(c.tasks[2].id == "keypoints_2");
  CHECK(c.tasks[2].n_keypoints == 50);
  CHECK(c.adapt_modes == std::vector<AdaptMode>{AdaptMode::None, AdaptMode::DatasetWise});
  CHECK(c.thresholds.theta == 0.7);
  CHECK(c.thresholds.epsilon_px == 2.0);
  CHECK(c.thresholds.mask == 0.4);
  CHECK(c.sr_weights.beta == 0.2);
  CHECK(c.sr_weights.task_space == TaskSpace::Feature);
  CHECK(c.seed == 9);
  CHECK(c.split == "test");
  CHECK_NOTHROW(validate_run_config(c));

  const std::string h = config_hash(c);
  CHECK(h.size() == 16);
  CHECK(h == config_hash(parse_run_config(text, dir.path)));
  RunConfig c2 = c;
  c2.seed = 10;
  CHECK(config_hash(c2) != h);
  RunConfig c3 = c;
  c3.out = "/elsewhere";
  c3.threads = 4;
  CHECK(config_hash(c3) == h);  // output location and thread count do not change results

  // FNV-1a reference values.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("run config errors") {
  testutil::TempDir dir;
  fake_dataset(dir);
  auto usage = [&](const std::string& text) {
    try {
      validate_run_config(parse_run_config(text, dir.path));
    } catch (const Error& e) {
      return e.kind() == ErrorKind::Usage;
    }
    return false;
  };
  CHECK(usage("[1, 2]"));
  CHECK(usage("not json"));
  CHECK(usage(R"({"dataset": "data", "thresholds": {"theta": 1.5}})"));
  CHECK(usage(R"({"dataset": "data", "thresholds": {"mask": 1.0}})"));
  CHECK(usage(R"({"dataset": "data", "tasks": [{"kind": "segmentation"}]})"));
  CHECK(usage(R"({"dataset": "data", "tasks": [{"kind": "segmentation", "model": "nope.json"}]})"));
  CHECK(usage(R"({"dataset": "data", "tasks": [{"kind": "mystery"}]})"));
  CHECK(usage(R"({"dataset": "data", "tasks": [{"kind": "keypoints", "id": "a"}, {"kind": "partition", "id": "a"}]})"));
  CHECK(usage(R"({"dataset": "data", "adapt_modes": ["sometimes"]})"));
  CHECK(usage(R"({"dataset": "data", "sr": {"weights": {"alpha": -1}}})"));
  CHECK(usage(R"({"dataset": "missing"})"));
  CHECK(usage(R"({"dataset": "data", "seed": "seven"})"));

  // Dataset root from the environment.
  ::unsetenv("SRTASK_DATA_ROOT");
  CHECK(usage("{}"));
  ::setenv("SRTASK_DATA_ROOT", (dir / "data").c_str(), 1);
  CHECK(parse_run_config("{}", dir.path).dataset == dir / "data");
  ::unsetenv("SRTASK_DATA_ROOT");
}

TEST_CASE("metrics json") {
  TaskSuitabilityReport r;
  r.task = "roads";
  r.best_mode = "none";
  r.pass_fraction = 0.9;
  r.label = Suitability::Suitable;
  r.modes["none"] = ModeSummary{10, 9, 0.9, 0.4, 0.6, Suitability::Suitable};
  const auto j = metrics_json({r}, "0123456789abcdef", 7);
  CHECK(j.find("\"config_hash\": \"0123456789abcdef\"") != std::string::npos);
  CHECK(j.find("\"seed\": 7") != std::string::npos);
  CHECK(j.find("\"roads\"") != std::string::npos);
  CHECK(j == metrics_json({r}, "0123456789abcdef", 7));
}

TEST_CASE("ring geometry matches the oracle") {
  for (double cx : {10.0, 10.4, 10.6, 9.5})
    for (double cy : {10.0, 10.49, 11.2})
      for (int r = 1; r <= 5; ++r)
        for (int y = 0; y < 21; ++y)
          for (int x = 0; x < 21; ++x) CHECK(on_circle(x, y, cx, cy, r) == ring_oracle(x, y, cx, cy, r));
}

TEST_CASE("segmentation panel: 3x3 layout, labels, determinism") {
  testutil::TempDir dir;
  SynthSpec spec;
  spec.width = spec.height = 48;
  spec.seed = 4;
  const SynthScene ss = generate_scene(spec, Domain::A, "p0");
  TaskModel model;
  model.net = UNet(UNetConfig{2, 4, 1}, 3);
  TaskSpec task;
  task.id = "seg";
  task.model = model;
  const auto results = run_three_branch(ss.scene, task, AdaptMode::None);
  const std::vector<std::string> labels = {"LR 0.512", "BICUBIC 0.734", "HR REF"};

  const PanelStyle st;
  const io::PngImage img = panel_image(ss.scene, results, labels, st);
  const int W = 48, H = 48, header = 5 * st.label_scale + 4;
  CHECK(img.width == 3 * W + 4 * st.margin);
  CHECK(img.height == header + 3 * H + 4 * st.margin);
  CHECK(img.channels == 3);

  // White label pixels above every column.
  for (int col = 0; col < 3; ++col) {
    int white = 0;
    for (int y = 0; y < header; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t i = (static_cast<std::size_t>(y) * img.width + st.margin + col * (W + st.margin) + x) * 3;
        white += img.samples[i] == 255 && img.samples[i + 1] == 255 && img.samples[i + 2] == 255;
      }
    CHECK(white > 10);
  }

  // Output row shows the probability in grey; masked overlay pixels are the 50% blend.
  const auto& seg = std::get<SegMask>(results[2].on_hr_grid);
  const int x0 = st.margin + 2 * (W + st.margin);
  const int y_in = header + st.margin, y_out = y_in + H + st.margin, y_ov = y_out + H + st.margin;
  for (int y = 0; y < H; y += 7)
    for (int x = 0; x < W; x += 5) {
      auto px = [&](int yy) {
        const std::size_t i = (static_cast<std::size_t>(yy) * img.width + x0 + x) * 3;
        return std::array<int, 3>{img.samples[i], img.samples[i + 1], img.samples[i + 2]};
      };
      const int g = static_cast<int>(std::lround(std::clamp(seg.prob.at(x, y), 0.0, 1.0) * 255));
      CHECK(px(y_out + y) == std::array<int, 3>{g, g, g});
      const auto in = px(y_in + y), ov = px(y_ov + y);
      if (seg.binary.at(x, y)) {
        CHECK(ov[0] == static_cast<int>(std::lround(0.5 * in[0] + 0.5 * 255)));
      } else {
        CHECK(ov == in);
      }
    }

  render_panel(ss.scene, results, labels, dir / "a.png", {{"config_hash", "abc"}, {"seed", "3"}});
  render_panel(ss.scene, results, labels, dir / "b.png", {{"config_hash", "abc"}, {"seed", "3"}});
  CHECK(io::read_file(dir / "a.png") == io::read_file(dir / "b.png"));
  const io::PngImage back = io::read_png(dir / "a.png");
  CHECK(back.samples == img.samples);
  CHECK(back.text.at("config_hash") == "abc");
  CHECK(back.text.at("seed") == "3");

  CHECK_THROWS_AS(panel_image(ss.scene, std::span(results).first(1), labels), Error);
}

TEST_CASE("keypoint panel: 1000 circles against a reference renderer") {
  const Scene scene = textured_scene(256, 2);
  TaskSpec task;
  task.id = "kp";
  task.kind = TaskKind::Keypoints;
  task.n_keypoints = 1000;
  const auto results = run_three_branch(scene, task, AdaptMode::None);
  const auto& pts = std::get<KeypointSet>(results[2].on_hr_grid);
  REQUIRE(pts.points.size() == 1000u);

  const PanelStyle st;
  const io::PngImage img = panel_image(scene, results, {"LR", "BICUBIC", "HR"}, st);
  const int W = 256, H = 256, header = 5 * st.label_scale + 4;
  const int y_out = header + st.margin + H + st.margin;

  // Reference: black background, yellow 3 px rings, drawn independently.
  for (int col = 0; col < 3; ++col) {
    const auto& k = std::get<KeypointSet>(results[col].on_hr_grid);
    std::vector<std::uint8_t> ref(static_cast<std::size_t>(W) * H * 3, 0);
    for (const auto& p : k.points)
      for (int y = 0; y < H; ++y) {
        if (std::abs(y - p.y) > 5) continue;
        for (int x = 0; x < W; ++x)
          if (std::abs(x - p.x) <= 5 && ring_oracle(x, y, p.x, p.y, 3)) {
            const std::size_t i = (static_cast<std::size_t>(y) * W + x) * 3;
            ref[i] = 255;
            ref[i + 1] = 220;
            ref[i + 2] = 0;
          }
      }
    const int x0 = st.margin + col * (W + st.margin);
    std::size_t diff = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int ch = 0; ch < 3; ++ch)
          diff += img.samples[(static_cast<std::size_t>(y_out + y) * img.width + x0 + x) * 3 + ch] !=
                  ref[(static_cast<std::size_t>(y) * W + x) * 3 + ch];
    CHECK(diff == 0u);
  }

  // Every HR point leaves a visible ring.
  const int x0 = st.margin + 2 * (W + st.margin);
  int drawn = 0;
  for (const auto& p : pts.points) {
    bool any = false;
    for (int dy = -3; dy <= 3 && !any; ++dy)
      for (int dx = -3; dx <= 3 && !any; ++dx) {
        const long x = std::lround(p.x) + dx, y = std::lround(p.y) + dy;
        if (x < 0 || y < 0 || x >= W || y >= H || !ring_oracle(int(x), int(y), p.x, p.y, 3)) continue;
        const std::size_t i = (static_cast<std::size_t>(y_out + y) * img.width + x0 + x) * 3;
        any = img.samples[i] == 255 && img.samples[i + 1] == 220 && img.samples[i + 2] == 0;
      }
    drawn += any;
  }
  CHECK(drawn == 1000);
}

TEST_CASE("partition panel renders") {
  const Scene scene = textured_scene(48, 3);
  TaskSpec task;
  task.id = "part";
  task.kind = TaskKind::Partition;
  const auto results = run_three_branch(scene, task, AdaptMode::None);
  const io::PngImage a = panel_image(scene, results, {"A", "B", "C"});
  const io::PngImage b = panel_image(scene, results, {"A", "B", "C"});
  CHECK(a.samples == b.samples);
}
