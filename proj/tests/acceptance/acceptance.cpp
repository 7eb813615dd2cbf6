// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Usage: srtask_acceptance [criterion ...]   (default: all)
// Prints one PASS/FAIL line per criterion; exits non-zero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <unistd.h>
#include <vector>

#include "srtask/adapt.hpp"
#include "srtask/error.hpp"
#include "srtask/evaluate.hpp"
#include "srtask/image_io.hpp"
#include "srtask/log.hpp"
#include "srtask/pipeline.hpp"
#include "srtask/resample.hpp"
#include "srtask/rng.hpp"
#include "srtask/synth.hpp"
#include "srtask/train_sr.hpp"

using namespace srtask;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char b[64];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& tag)
      : path(fs::temp_directory_path() / ("srtask-accept-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::vector<SynthScene> make_scenes(const SynthSpec& base, int n, std::uint64_t seed, Domain d = Domain::A) {
  std::vector<SynthScene> out;
  for (int i = 0; i < n; ++i) {
    SynthSpec s = base;
    s.seed = seed * 1000 + static_cast<std::uint64_t>(i);
    out.push_back(generate_scene(s, d, "t" + std::to_string(i)));
  }
  return out;
}

SegTrainConfig roads_config(int steps) {
  SegTrainConfig c;
  c.arch = {3, 8, 1};
  c.bands = {"B08"};
  c.target = "roads";
  c.epochs = 1;
  c.steps_per_epoch = steps;
  c.batch = 4;
  c.crop = 64;
  c.lr = 2e-3;
  c.seed = 7;
  return c;
}

TaskModel train_roads(std::span<const SegSample> train, int steps, double gsd) {
  TaskModel m = segmentation_train(train, {}, roads_config(steps)).model;
  m.training_gsd = gsd;
  return m;
}

double mean_iou(const TaskModel& model, std::span<const SegSample> test) {
  double s = 0;
  for (const auto& t : test) s += mask_iou(segmentation_infer(model, t.image).binary, t.mask);
  return s / static_cast<double>(test.size());
}

// ------------------------------------------------------------ 1. resampling

Outcome resampling() {
  Rng rng(1);
  double const_err = 0, ramp_err = 0, block_err = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int w = rng.uniform_int(4, 40), h = rng.uniform_int(4, 40);
    const int tw = rng.uniform_int(2, 120), th = rng.uniform_int(2, 120);
    const double c = rng.uniform();
    Raster k(w, h, {"B08"}, 1.0, c);
    const Raster resized = bicubic_resize(k, tw, th);
    for (double v : resized.pixels()) const_err = std::max(const_err, std::abs(v - c));

    // Linear ramp at integer scale; interior pixels have a full 4-tap support.
    const int s = rng.uniform_int(2, 4);
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    Raster ramp(w, h, {"B08"}, 1.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) ramp.at(0, x, y) = 0.5 + 0.01 * (a * x + b * y);
    const Raster up = bicubic_resize(ramp, w * s, h * s);
    for (int y = 0; y < h * s; ++y)
      for (int x = 0; x < w * s; ++x) {
        const double sx = (x + 0.5) / s - 0.5, sy = (y + 0.5) / s - 0.5;
        if (sx < 1 || sy < 1 || sx > w - 2 || sy > h - 2) continue;
        ramp_err = std::max(ramp_err, std::abs(up.at(0, x, y) - (0.5 + 0.01 * (a * sx + b * sy))));
      }

    // Area downsampling by an integer factor equals the block mean.
    Raster img(w * s, h * s, {"B08"}, 1.0);
    for (double& v : img.pixels()) v = rng.uniform();
    const Raster down = area_resize(img, w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sum = 0;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) sum += img.at(0, x * s + dx, y * s + dy);
        block_err = std::max(block_err, std::abs(down.at(0, x, y) - sum / (s * s)));
      }
  }
  const auto q = keys_weights(0.5);
  const bool quad = q[0] == -0.0625 && q[1] == 0.5625 && q[2] == 0.5625 && q[3] == -0.0625;
  const bool pass = const_err <= 1e-12 && ramp_err <= 1e-6 && quad && block_err <= 1e-12;
  return {pass, "constant " + fmt("%.1e", const_err) + ", ramp " + fmt("%.1e", ramp_err) + ", block " +
                    fmt("%.1e", block_err) + ", weights(0.5) " + (quad ? "exact" : "wrong")};
}

// ---------------------------------------------------------- 2. metric oracles

Outcome metric_oracles() {
  auto square = [](int x0, int y0) {
    RealGrid p(16, 16, 0.0);
    for (int y = y0; y < y0 + 4; ++y)
      for (int x = x0; x < x0 + 4; ++x) p.at(x, y) = 1.0;
    return make_seg_mask(p);
  };
  const double iou = agreement_mask(square(2, 2), square(4, 2)).primary;

  KeypointSet a, b;
  a.width = b.width = a.height = b.height = 64;
  a.points = {{0, 0, 1}, {10, 10, 1}};
  b.points = {{1, 1, 1}, {50, 50, 1}};
  const double rep = agreement_keypoints(a, b, 3.0).primary;

  Rng rng(2);
  bool ari_ok = true;
  for (int t = 0; t < 20; ++t) {
    LabelGrid x(12, 9), y(12, 9);
    for (auto& v : x.data) v = rng.uniform_int(0, 4);
    for (auto& v : y.data) v = rng.uniform_int(0, 3);
    std::vector<std::int32_t> perm = {3, 0, 4, 1, 2};
    LabelGrid xp = x;
    for (auto& v : xp.data) v = perm[static_cast<std::size_t>(v)];
    ari_ok = ari_ok && std::abs(adjusted_rand_index(x, xp) - 1.0) < 1e-12 &&
             std::abs(adjusted_rand_index(xp, y) - adjusted_rand_index(x, y)) < 1e-12;
  }

  SynthSpec spec;
  spec.width = spec.height = 48;
  const SynthScene sc = generate_scene(spec);
  TaskSpec seg, kp, part;
  seg.kind = TaskKind::Segmentation;
  seg.model = TaskModel{};
  seg.model->net = UNet({2, 4, 1}, 3);
  kp.kind = TaskKind::Keypoints;
  kp.n_keypoints = 200;
  part.kind = TaskKind::Partition;
  double self_min = 1.0;
  for (const TaskSpec* t : {&seg, &kp, &part}) {
    const TaskOutput o = run_task(*t, sc.scene.hr);
    self_min = std::min(self_min, agreement(o, o).primary);
  }
  const bool pass = std::abs(iou - 1.0 / 3.0) < 1e-12 && rep == 0.5 && ari_ok && self_min == 1.0;
  return {pass, "IoU " + fmt("%.6f", iou) + ", repeatability " + fmt("%.3f", rep) + ", ARI permutation " +
                    (ari_ok ? "invariant" : "broken") + ", min self-agreement " + fmt("%.3f", self_min)};
}

// ----------------------------------------------------------- 3. gradient check

Outcome gradient_check() {
  TaskModel task;
  task.bands = {"B08"};
  task.net = UNet({2, 4, 1}, 8);
  Rng rng(3);
  for (auto* bn : task.net.bn_layers())
    for (int c = 0; c < bn->c; ++c) {
      bn->running_mean.v[c] = 0.05 * rng.normal();
      bn->running_var.v[c] = 0.5 + rng.uniform();
    }
  auto random_raster = [&](int w, int h) {
    Raster r(w, h, {"B08"}, 1.0);
    for (double& v : r.pixels()) v = 0.1 + 0.8 * rng.uniform();
    return r;
  };
  auto norm = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  double worst = 0;
  const std::vector<std::array<double, 3>> configs{{1, 0, 0}, {1, 0.1, 0}, {1, 0.1, 0.1}};
  for (TaskSpace space : {TaskSpace::Output, TaskSpace::Feature})
    for (const auto& c : configs)
      for (int point = 0; point < 3; ++point) {
        const Raster sr = random_raster(8, 8), hr = random_raster(8, 8), lr = random_raster(4, 4);
        const LossWeights w{c[0], c[1], c[2], ImageNorm::L1, space};
        Raster grad;
        composite_loss(sr, hr, lr, &task, w, &grad);
        std::vector<double> fd(sr.pixels().size()), diff(fd.size());
        const double h = 1e-6;
        for (std::size_t i = 0; i < fd.size(); ++i) {
          Raster p = sr, m = sr;
          p.pixels()[i] += h;
          m.pixels()[i] -= h;
          fd[i] = (composite_loss(p, hr, lr, &task, w).total - composite_loss(m, hr, lr, &task, w).total) / (2 * h);
          diff[i] = fd[i] - grad.pixels()[i];
        }
        worst = std::max(worst, norm(diff) / std::max(norm(fd), norm(grad.pixels())));
      }
  return {worst < 1e-4, "worst relative error " + fmt("%.2e", worst) + " over 18 checks"};
}

// ---------------------------------------------------------- 4. ordering

Outcome ordering() {
  const SynthSpec spec;  // 96 x 96 HR at 10/3 m, S = 3
  const auto train_scenes = make_scenes(spec, 30, 41);
  const auto train = hr_samples(train_scenes, "roads");
  const TaskModel model = train_roads(train, 200, spec.hr_gsd);

  Scratch dir("c4");
  SynthSpec eval_spec = spec;
  eval_spec.seed = 4242;
  const DatasetManifest m = generate_corpus(eval_spec, 50, Domain::A, dir.path);
  TaskSpec task;
  task.id = "roads";
  task.model = model;
  const auto verdicts = evaluate_corpus(dir.path, m.ids(), task, {AdaptMode::None});
  const TaskSuitabilityReport r = aggregate_suitability(verdicts, "roads", 0.8);
  const auto& s = r.modes.at("none");
  return {s.pass_fraction >= 0.8 && r.label == Suitability::Suitable,
          std::to_string(s.n_pass) + "/" + std::to_string(s.n_scenes) + " scenes bicubic > LR (" +
              fmt("%.2f", s.pass_fraction) + "), mean agreement LR " + fmt("%.3f", s.mean_score_lr) + " bicubic " +
              fmt("%.3f", s.mean_score_bicubic) + ", label " + to_string(r.label)};
}

// ---------------------------------------------------- 5. scale sensitivity

Outcome scale_sensitivity() {
  const double k = 10.0 / 3.0;
  SynthSpec fine;  // the default scene described at 1 m
  fine.width = fine.height = 240;
  fine.hr_gsd = 1.0;
  fine.road_width = {4 * k, 8 * k};
  fine.building_size = {6 * k, 14 * k};
  fine.building_gap = 7;
  fine.clutter_count = {2, 4};
  fine.clutter_width = {3, 8};
  fine.texture_scale = 8 * k;

  auto scaled = [&](const std::vector<SynthScene>& scenes) {
    const auto s = hr_samples(scenes, "roads");
    return rescale_training_corpus(s, k);
  };
  const auto train_scenes = make_scenes(fine, 24, 51);
  const auto test_scenes = make_scenes(fine, 12, 52);
  const auto fine_train = hr_samples(train_scenes, "roads");
  const auto coarse_train = scaled(train_scenes);
  const auto coarse_test = scaled(test_scenes);

  const TaskModel at_fine = train_roads(fine_train, 300, 1.0);
  const TaskModel at_coarse = train_roads(coarse_train, 300, k);
  const double fine_on_fine = mean_iou(at_fine, hr_samples(test_scenes, "roads"));
  const double iou_fine = mean_iou(at_fine, coarse_test);
  const double iou_coarse = mean_iou(at_coarse, coarse_test);
  return {iou_coarse - iou_fine >= 0.2, "IoU on 10/3 m imagery: fine-GSD model " + fmt("%.3f", iou_fine) +
                                            ", retrained " + fmt("%.3f", iou_coarse) + " (gap " +
                                            fmt("%.3f", iou_coarse - iou_fine) + "); fine model at 1 m " +
                                            fmt("%.3f", fine_on_fine)};
}

// ------------------------------------------------------- 6. BN adaptation

Outcome bn_adaptation() {
  const SynthSpec spec;
  const auto train = hr_samples(make_scenes(spec, 30, 61), "roads");
  const TaskModel model = train_roads(train, 200, spec.hr_gsd);
  const auto test_a = hr_samples(make_scenes(spec, 16, 62, Domain::A), "roads");
  const auto test_b = hr_samples(make_scenes(spec, 16, 62, Domain::B), "roads");

  std::vector<Raster> pool;
  for (const auto& t : test_b) pool.push_back(t.image);
  const double none = mean_iou(model, test_b);
  const double dataset = mean_iou(adapt_model(model, AdaptMode::DatasetWise, pool, "domain B"), test_b);
  double sample = 0;
  for (const auto& t : test_b) {
    const TaskModel m = adapt_model(model, AdaptMode::SampleWise, std::span(&t.image, 1), "scene");
    sample += mask_iou(segmentation_infer(m, t.image).binary, t.mask);
  }
  sample /= static_cast<double>(test_b.size());
  const double best = std::max(dataset, sample);
  return {best - none >= 0.05, "domain B mean IoU: none " + fmt("%.3f", none) + ", dataset_wise " +
                                   fmt("%.3f", dataset) + ", sample_wise " + fmt("%.3f", sample) +
                                   " (domain A reference " + fmt("%.3f", mean_iou(model, test_a)) + ")"};
}

// -------------------------------------------------- 7. task-driven training

Outcome task_driven() {
  const SynthSpec spec;
  const std::vector<std::string> b08{"B08"};
  const auto train_scenes = make_scenes(spec, 30, 71), val_scenes = make_scenes(spec, 8, 72),
             test_scenes = make_scenes(spec, 20, 73);
  const TaskModel task = train_roads(hr_samples(train_scenes, "roads"), 200, spec.hr_gsd);

  auto pairs = [&](const std::vector<SynthScene>& scenes) {
    std::vector<SRPair> p;
    for (const auto& s : scenes) p.push_back({s.scene.lr().select(b08), s.scene.hr.select(b08)});
    return p;
  };
  const auto train = pairs(train_scenes), val = pairs(val_scenes);
  const SRModel init({spec.scale, 4, 16, b08}, 11);
  SRTrainConfig cfg;
  cfg.epochs = 4;
  cfg.steps_per_epoch = 100;
  cfg.batch = 4;
  cfg.lr_crop = 16;
  cfg.learning_rate = 1e-3;
  cfg.seed = 12;

  const LossWeights full{1.0, 0.1, 0.1};
  const LossWeights ablation{1.0, 0.0, 0.0};
  const auto r_full = train_task_driven(init, train, val, task, full, cfg);
  const auto r_abl = train_task_driven(init, train, val, task, ablation, cfg);
  if (r_full.diverged || r_abl.diverged) return {false, "training diverged"};

  double bicubic = 0, with_task = 0, image_only = 0;
  for (const auto& s : test_scenes) {
    const Raster lr = s.scene.lr().select(b08);
    const Raster bc = bicubic_resize(lr, s.scene.hr.width(), s.scene.hr.height());
    bicubic += mask_iou(segmentation_infer(task, bc).binary, s.roads);
    with_task += mask_iou(segmentation_infer(task, sr_infer(r_full.model, lr)).binary, s.roads);
    image_only += mask_iou(segmentation_infer(task, sr_infer(r_abl.model, lr)).binary, s.roads);
  }
  const double n = static_cast<double>(test_scenes.size());
  bicubic /= n;
  with_task /= n;
  image_only /= n;
  return {with_task >= bicubic + 0.02 && with_task >= image_only,
          "held-out road IoU: bicubic " + fmt("%.3f", bicubic) + ", SR (1,0,0) " + fmt("%.3f", image_only) +
              ", SR (1,0.1,0.1) " + fmt("%.3f", with_task)};
}

// ------------------------------------------------------ 8. keypoint contract

Outcome keypoint_contract() {
  SynthSpec spec;
  spec.width = spec.height = 300;  // ~2000 local maxima; 192 px tiles hold only ~800
  int exact = 0;
  const int n = 5;
  for (const auto& s : make_scenes(spec, n, 81)) exact += keypoint_detect(s.scene.hr, 1000).points.size() == 1000u;
  Raster flat(300, 300, spec.bands, spec.hr_gsd, 0.4);
  const std::size_t on_flat = keypoint_detect(flat, 1000).points.size();
  return {exact == n && on_flat == 0, std::to_string(exact) + "/" + std::to_string(n) +
                                          " textured scenes gave exactly 1000 points; constant image gave " +
                                          std::to_string(on_flat)};
}

// ------------------------------------------------------------ 9. determinism

Outcome determinism() {
  Scratch dir("c9");
  SynthSpec spec;
  spec.width = spec.height = 48;
  spec.seed = 91;
  generate_corpus(spec, 12, Domain::A, dir.path / "data");
  const auto scenes = make_scenes(spec, 8, 92);
  SegTrainConfig tc = roads_config(40);
  tc.arch = {2, 4, 1};
  tc.crop = 48;
  save_task_model(segmentation_train(hr_samples(scenes, "roads"), {}, tc).model, dir.path / "roads.json");

  const std::string cfg = R"({"dataset": "data",
    "tasks": [{"id": "roads", "kind": "segmentation", "model": "roads.json"},
              {"kind": "keypoints", "n_keypoints": 300}, {"kind": "partition"}],
    "adapt_modes": ["none", "sample_wise", "dataset_wise"],
    "reference_metrics": true, "split": "", "threads": 4, "seed": 3})";
  io::write_text(dir.path / "cfg.json", cfg);
  pipeline::eval({dir.path / "out1", dir.path / "cfg.json", std::nullopt});
  pipeline::eval({dir.path / "out2", dir.path / "cfg.json", std::nullopt});
  const auto a = io::read_file(dir.path / "out1" / "metrics.json");
  const auto b = io::read_file(dir.path / "out2" / "metrics.json");
  const auto va = io::read_file(dir.path / "out1" / "verdicts.jsonl");
  const auto vb = io::read_file(dir.path / "out2" / "verdicts.jsonl");
  return {!a.empty() && a == b, "metrics.json " + std::to_string(a.size()) + " bytes, " +
                                    (a == b ? "identical" : "different") + "; verdicts.jsonl " +
                                    (va == vb ? "identical" : "different")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  log::set_min_level(log::Level::Error);
  const std::vector<Criterion> all = {
      {1, "resampling suite", 10, resampling},
      {2, "metric oracles", 10, metric_oracles},
      {3, "composite-loss gradient check", 120, gradient_check},
      {4, "ordering: bicubic beats LR, task SUITABLE", 900, ordering},
      {5, "scale sensitivity", 1200, scale_sensitivity},
      {6, "batch-norm adaptation under domain shift", 600, bn_adaptation},
      {7, "task-driven SR training", 1800, task_driven},
      {8, "keypoint count contract", 60, keypoint_contract},
      {9, "eval determinism", 300, determinism},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
    }
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
