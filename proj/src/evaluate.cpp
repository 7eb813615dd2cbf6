// SPDX-License-Identifier: Apache-2.0
#include "srtask/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "srtask/error.hpp"
#include "srtask/image_io.hpp"
#include "srtask/log.hpp"
#include "srtask/resample.hpp"

namespace srtask {

using json = nlohmann::json;

const char* to_string(Branch b) {
  switch (b) {
    case Branch::LR: return "lr";
    case Branch::Bicubic: return "bicubic";
    case Branch::HR: return "hr";
  }
  return "?";
}

// ------------------------------------------------------------------ branches

namespace {

Raster task_bands(const TaskSpec& task, const Raster& raster) {
  if (!task.bands.empty()) return raster.select(task.bands);
  // Luminance expects R, G, B order.
  const std::vector<std::string> rgb{"B04", "B03", "B02"};
  if (std::all_of(rgb.begin(), rgb.end(), [&](const auto& b) { return raster.band_index(b) >= 0; }))
    return raster.select(rgb);
  return raster;
}

}  // namespace

TaskOutput run_task(const TaskSpec& task, const Raster& raster, AdaptMode mode, const TaskModel* model_override) {
  if (!task.external.empty()) return external_task_adapter(task.external, raster);
  switch (task.kind) {
    case TaskKind::Segmentation: {
      const TaskModel* m = model_override ? model_override : (task.model ? &*task.model : nullptr);
      require(m != nullptr, ErrorKind::Usage, "segmentation task '" + task.id + "' has no model");
      if (mode == AdaptMode::SampleWise) {
        const std::vector<Raster> one{raster};
        return segmentation_infer(adapt_model(*m, AdaptMode::SampleWise, one, "sample"), raster);
      }
      return segmentation_infer(*m, raster);
    }
    case TaskKind::Keypoints: return keypoint_detect(task_bands(task, raster), task.n_keypoints, task.keypoint_params);
    case TaskKind::Partition: return unsupervised_segment(task_bands(task, raster), task.partition_params);
  }
  fail(ErrorKind::Usage, "unknown task kind");
}

std::array<Raster, 3> branch_inputs(const Scene& scene) {
  const Raster& lr = scene.lr();
  return {lr, bicubic_resize(lr, scene.hr.width(), scene.hr.height()), scene.hr};
}

TaskOutput lift_output(const TaskOutput& out, int scale) {
  require(scale >= 1, ErrorKind::Usage, "lift factor must be positive");
  if (const auto* m = std::get_if<SegMask>(&out)) {
    SegMask lifted;
    lifted.prob = lift_nearest(m->prob, scale);
    lifted.binary = lift_nearest(m->binary, scale);
    lifted.threshold = m->threshold;
    return lifted;
  }
  if (const auto* k = std::get_if<KeypointSet>(&out)) {
    KeypointSet lifted = *k;
    lifted.width *= scale;
    lifted.height *= scale;
    for (auto& p : lifted.points) {
      p.x = (p.x + 0.5) * scale - 0.5;
      p.y = (p.y + 0.5) * scale - 0.5;
    }
    return lifted;
  }
  const auto& p = std::get<Partition>(out);
  return Partition{lift_nearest(p.labels, scale), p.count};
}

std::array<BranchResult, 3> run_three_branch(const Scene& scene, const TaskSpec& task, AdaptMode mode,
                                             const DatasetModels* dataset_models) {
  require(mode != AdaptMode::DatasetWise || task.kind != TaskKind::Segmentation || !task.external.empty() ||
              dataset_models != nullptr,
          ErrorKind::Usage, "dataset-wise evaluation needs recalibrated models");
  const auto inputs = branch_inputs(scene);
  const Branch order[3] = {Branch::LR, Branch::Bicubic, Branch::HR};
  std::array<BranchResult, 3> out;
  for (int i = 0; i < 3; ++i) {
    const TaskModel* override_model = nullptr;
    if (mode == AdaptMode::DatasetWise && dataset_models)
      override_model = i == 0 ? &dataset_models->lr : i == 1 ? &dataset_models->bicubic : &dataset_models->hr;
    try {
      out[i].branch = order[i];
      out[i].output = run_task(task, inputs[i], mode, override_model);
      out[i].on_hr_grid = i == 0 ? lift_output(out[i].output, scene.scale) : out[i].output;
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(to_string(order[i])) + " branch: " + e.what());
    }
    require(output_width(out[i].on_hr_grid) == scene.hr.width() && output_height(out[i].on_hr_grid) == scene.hr.height(),
            ErrorKind::Contract, std::string(to_string(order[i])) + " branch output does not cover the HR grid");
  }
  return out;
}

// ------------------------------------------------------------------- metrics

namespace {

Mask boundary(const Mask& m) {
  Mask b(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      const bool edge = (x > 0 && !m.at(x - 1, y)) || (x + 1 < m.width && !m.at(x + 1, y)) ||
                        (y > 0 && !m.at(x, y - 1)) || (y + 1 < m.height && !m.at(x, y + 1));
      b.at(x, y) = edge;
    }
  return b;
}

// Share of `from` boundary pixels that have a `to` boundary pixel within tol.
std::pair<std::size_t, std::size_t> matched_boundary(const Mask& from, const Mask& to, double tol) {
  const int r = static_cast<int>(std::floor(tol));
  std::size_t total = 0, hit = 0;
  for (int y = 0; y < from.height; ++y)
    for (int x = 0; x < from.width; ++x) {
      if (!from.at(x, y)) continue;
      ++total;
      bool found = false;
      for (int dy = -r; dy <= r && !found; ++dy)
        for (int dx = -r; dx <= r && !found; ++dx) {
          const int u = x + dx, v = y + dy;
          if (u < 0 || v < 0 || u >= to.width || v >= to.height) continue;
          found = to.at(u, v) && dx * dx + dy * dy <= tol * tol;
        }
      hit += found;
    }
  return {hit, total};
}

double choose2(double n) { return 0.5 * n * (n - 1.0); }

std::vector<double> density(const KeypointSet& k, int cells, int width, int height) {
  std::vector<double> h(static_cast<std::size_t>(cells) * cells, 0.0);
  for (const auto& p : k.points) {
    const int cx = std::clamp(static_cast<int>(std::floor((p.x + 0.5) / width * cells)), 0, cells - 1);
    const int cy = std::clamp(static_cast<int>(std::floor((p.y + 0.5) / height * cells)), 0, cells - 1);
    h[static_cast<std::size_t>(cy) * cells + cx] += 1.0;
  }
  if (!k.points.empty())
    for (double& v : h) v /= static_cast<double>(k.points.size());
  return h;
}

}  // namespace

double boundary_f1(const Mask& candidate, const Mask& target, double tolerance) {
  require(candidate.same_dims(target), ErrorKind::Data, "mask dims differ");
  const Mask bc = boundary(candidate), bt = boundary(target);
  const auto [pc_hit, pc_total] = matched_boundary(bc, bt, tolerance);
  const auto [rc_hit, rc_total] = matched_boundary(bt, bc, tolerance);
  if (pc_total == 0 && rc_total == 0) return 1.0;
  if (pc_total == 0 || rc_total == 0) return 0.0;
  const double precision = static_cast<double>(pc_hit) / pc_total;
  const double recall = static_cast<double>(rc_hit) / rc_total;
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

AgreementScore agreement_mask(const SegMask& candidate, const SegMask& target, double boundary_tolerance) {
  const Mask& a = candidate.binary;
  const Mask& b = target.binary;
  require(a.same_dims(b), ErrorKind::Data, "mask dims differ");
  std::size_t inter = 0, uni = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a.data[i] && b.data[i];
    uni += a.data[i] || b.data[i];
    na += a.data[i] != 0;
    nb += b.data[i] != 0;
  }
  AgreementScore s;
  const double iou = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  s.components["iou"] = iou;
  s.components["dice"] = na + nb == 0 ? 1.0 : 2.0 * inter / static_cast<double>(na + nb);
  s.components["boundary_f1"] = boundary_f1(a, b, boundary_tolerance);
  s.primary = iou;
  if (uni == 0) s.flags.push_back("both_empty");
  return s;
}

double jensen_shannon(const std::vector<double>& p, const std::vector<double>& q) {
  require(p.size() == q.size(), ErrorKind::Data, "histogram sizes differ");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) js += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0) js += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

AgreementScore agreement_keypoints(const KeypointSet& candidate, const KeypointSet& target, double epsilon_px,
                                   int density_cells) {
  require(candidate.width == target.width && candidate.height == target.height, ErrorKind::Data,
          "keypoint footprints differ");
  require(epsilon_px >= 0 && density_cells >= 1, ErrorKind::Usage, "bad keypoint agreement parameters");
  AgreementScore s;
  const auto& a = candidate.points;
  const auto& b = target.points;

  // Greedy one-to-one matching in order of increasing distance.
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  const double e2 = epsilon_px * epsilon_px;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double dx = a[i].x - b[j].x, dy = a[i].y - b[j].y;
      const double d2 = dx * dx + dy * dy;
      if (d2 <= e2) pairs.emplace_back(d2, i, j);
    }
  std::sort(pairs.begin(), pairs.end());
  std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
  std::size_t matches = 0;
  for (const auto& [d2, i, j] : pairs) {
    if (used_a[i] || used_b[j]) continue;
    used_a[i] = used_b[j] = 1;
    ++matches;
  }
  const std::size_t denom = std::min(a.size(), b.size());
  const double repeatability = denom == 0 ? 0.0 : static_cast<double>(matches) / denom;

  const auto pa = density(candidate, density_cells, target.width, target.height);
  const auto pb = density(target, density_cells, target.width, target.height);
  const double js = (a.empty() || b.empty()) ? 1.0 : jensen_shannon(pa, pb);

  s.components["repeatability"] = repeatability;
  s.components["density_js"] = js;
  s.components["matches"] = static_cast<double>(matches);
  if (b.empty()) s.flags.push_back("empty_target");
  if (a.empty()) s.flags.push_back("empty_candidate");
  s.primary = b.empty() ? 0.0 : repeatability;
  return s;
}

double adjusted_rand_index(const LabelGrid& a, const LabelGrid& b) {
  require(a.same_dims(b), ErrorKind::Data, "partition dims differ");
  require(!a.empty(), ErrorKind::Data, "empty partition");
  std::unordered_map<std::uint64_t, double> joint;
  std::unordered_map<std::int32_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a.data[i])) << 32) |
                     static_cast<std::uint32_t>(b.data[i]);
    joint[key] += 1.0;
    ra[a.data[i]] += 1.0;
    rb[b.data[i]] += 1.0;
  }
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, n] : joint) index += choose2(n);
  for (const auto& [k, n] : ra) sa += choose2(n);
  for (const auto& [k, n] : rb) sb += choose2(n);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = total > 0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  // Both partitions trivial (one cluster or all singletons) and identical.
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

AgreementScore agreement_partition(const Partition& candidate, const Partition& target) {
  AgreementScore s;
  const double ari = adjusted_rand_index(candidate.labels, target.labels);
  s.components["ari"] = ari;
  s.primary = std::clamp(ari, 0.0, 1.0);
  return s;
}

AgreementScore agreement(const TaskOutput& candidate, const TaskOutput& target, double epsilon_px) {
  require(candidate.index() == target.index(), ErrorKind::Data, "task output kinds differ");
  if (const auto* m = std::get_if<SegMask>(&candidate)) return agreement_mask(*m, std::get<SegMask>(target));
  if (const auto* k = std::get_if<KeypointSet>(&candidate))
    return agreement_keypoints(*k, std::get<KeypointSet>(target), epsilon_px);
  return agreement_partition(std::get<Partition>(candidate), std::get<Partition>(target));
}

double psnr(const Raster& a, const Raster& b) {
  require(a.width() == b.width() && a.height() == b.height() && a.channels() == b.channels(), ErrorKind::Data,
          "raster dims differ");
  double se = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) {
    const double d = a.pixels()[i] - b.pixels()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels().size());
  return mse == 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

double ssim(const Raster& a, const Raster& b) {
  require(a.width() == b.width() && a.height() == b.height() && a.channels() == b.channels(), ErrorKind::Data,
          "raster dims differ");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, sigma = 1.5;
  double total = 0;
  for (int c = 0; c < a.channels(); ++c) {
    const RealGrid x = a.band_grid(c), y = b.band_grid(c);
    RealGrid xx = x, yy = y, xy = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx.data[i] = x.data[i] * x.data[i];
      yy.data[i] = y.data[i] * y.data[i];
      xy.data[i] = x.data[i] * y.data[i];
    }
    const RealGrid mx = gaussian_blur(x, sigma), my = gaussian_blur(y, sigma);
    const RealGrid sxx = gaussian_blur(xx, sigma), syy = gaussian_blur(yy, sigma), sxy = gaussian_blur(xy, sigma);
    double sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double vx = sxx.data[i] - mx.data[i] * mx.data[i];
      const double vy = syy.data[i] - my.data[i] * my.data[i];
      const double cov = sxy.data[i] - mx.data[i] * my.data[i];
      sum += (2 * mx.data[i] * my.data[i] + c1) * (2 * cov + c2) /
             ((mx.data[i] * mx.data[i] + my.data[i] * my.data[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(x.size());
  }
  return total / a.channels();
}

// ------------------------------------------------------------------ verdicts

const char* to_string(HumanJudgement j) {
  switch (j) {
    case HumanJudgement::Better: return "better";
    case HumanJudgement::Worse: return "worse";
    case HumanJudgement::Unclear: return "unclear";
  }
  return "?";
}

HumanJudgement parse_human_judgement(const std::string& s) {
  if (s == "better") return HumanJudgement::Better;
  if (s == "worse") return HumanJudgement::Worse;
  if (s == "unclear") return HumanJudgement::Unclear;
  fail(ErrorKind::Usage, "verdict must be better, worse or unclear, got '" + s + "'");
}

namespace {

json score_json(const AgreementScore& s) {
  json j{{"primary", s.primary}, {"components", s.components}};
  if (!s.flags.empty()) j["flags"] = s.flags;
  return j;
}

AgreementScore score_from(const json& j) {
  AgreementScore s;
  s.primary = j.at("primary").get<double>();
  s.components = j.value("components", std::map<std::string, double>{});
  s.flags = j.value("flags", std::vector<std::string>{});
  return s;
}

json verdict_json(const SceneVerdict& v) {
  json j{{"scene_id", v.scene_id},
         {"task", v.task},
         {"mode", v.mode},
         {"score_lr", score_json(v.score_lr)},
         {"score_bicubic", score_json(v.score_bicubic)},
         {"auto_pass", v.auto_pass}};
  if (!v.error.empty()) j["error"] = v.error;
  if (v.reference_only) {
    json r = json::object();
    for (const auto& [k, x] : *v.reference_only)
      if (std::isfinite(x)) r[k] = x;
    j["reference_only"] = r;
  }
  if (!v.human.empty()) {
    json h = json::array();
    for (const auto& x : v.human)
      h.push_back({{"verdict", to_string(x.verdict)}, {"annotator", x.annotator}, {"timestamp", x.timestamp}});
    j["human"] = h;
  }
  if (!v.config_hash.empty()) {
    j["config_hash"] = v.config_hash;
    j["seed"] = v.seed;
  }
  return j;
}

auto verdict_key(const SceneVerdict& v) { return std::tie(v.scene_id, v.task, v.mode); }

}  // namespace

std::string verdict_to_json(const SceneVerdict& v) { return verdict_json(v).dump(); }

SceneVerdict verdict_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    SceneVerdict v;
    v.scene_id = j.at("scene_id").get<std::string>();
    v.task = j.at("task").get<std::string>();
    v.mode = j.value("mode", "none");
    v.score_lr = score_from(j.at("score_lr"));
    v.score_bicubic = score_from(j.at("score_bicubic"));
    v.auto_pass = j.at("auto_pass").get<bool>();
    v.error = j.value("error", "");
    v.config_hash = j.value("config_hash", "");
    v.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("reference_only")) v.reference_only = j["reference_only"].get<std::map<std::string, double>>();
    if (j.contains("human"))
      for (const auto& h : j["human"])
        v.human.push_back({parse_human_judgement(h.at("verdict").get<std::string>()), h.value("annotator", ""),
                           h.value("timestamp", "")});
    return v;
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, std::string("bad verdict record: ") + e.what());
  }
}

SceneVerdict evaluate_scene(const Scene& scene, const TaskSpec& task, AdaptMode mode, const EvalOptions& options,
                            const DatasetModels* dataset_models) {
  SceneVerdict v;
  v.scene_id = scene.id;
  v.task = task.id;
  v.mode = to_string(mode);
  try {
    const auto r = run_three_branch(scene, task, mode, dataset_models);
    v.score_lr = agreement(r[0].on_hr_grid, r[2].on_hr_grid, options.epsilon_px);
    v.score_bicubic = agreement(r[1].on_hr_grid, r[2].on_hr_grid, options.epsilon_px);
    v.auto_pass = v.score_bicubic.primary > v.score_lr.primary;
    if (options.reference_metrics) {
      const Raster bic = bicubic_resize(scene.lr(), scene.hr.width(), scene.hr.height());
      const Raster hr = scene.hr.select(scene.lr().bands());
      v.reference_only = std::map<std::string, double>{{"psnr", psnr(bic, hr)}, {"ssim", ssim(bic, hr)}};
    }
  } catch (const Error& e) {
    v.error = e.what();
    v.auto_pass = false;
    log::warn("scene " + scene.id + " skipped: " + e.what());
  }
  return v;
}

namespace {

template <class F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(n, threads > 0 ? static_cast<std::size_t>(threads) : hw);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

DatasetModels make_dataset_models(const TaskModel& model, std::span<const Scene> scenes, const std::string& source) {
  require(!scenes.empty(), ErrorKind::Data, "dataset-wise adaptation needs at least one scene");
  // One pool per branch: each branch sees a different input distribution.
  std::array<std::vector<Raster>, 3> pools;
  for (const auto& s : scenes) {
    auto in = branch_inputs(s);
    for (int b = 0; b < 3; ++b) pools[b].push_back(std::move(in[b]));
  }
  const std::string src = source + " (" + std::to_string(scenes.size()) + " scenes, ";
  return DatasetModels{adapt_model(model, AdaptMode::DatasetWise, pools[0], src + "lr branch)"),
                       adapt_model(model, AdaptMode::DatasetWise, pools[1], src + "bicubic branch)"),
                       adapt_model(model, AdaptMode::DatasetWise, pools[2], src + "hr branch)")};
}

std::vector<SceneVerdict> evaluate_corpus(const std::filesystem::path& root, const std::vector<std::string>& ids,
                                          const TaskSpec& task, const std::vector<AdaptMode>& modes,
                                          const EvalOptions& options) {
  require(!ids.empty(), ErrorKind::Data, "no scenes to evaluate");
  require(!modes.empty(), ErrorKind::Usage, "no adaptation modes given");
  std::vector<Scene> scenes;
  scenes.reserve(ids.size());
  for (const auto& id : ids) scenes.push_back(load_scene(root, id));

  std::vector<SceneVerdict> out;
  for (const AdaptMode mode : modes) {
    std::optional<DatasetModels> dm;
    if (mode == AdaptMode::DatasetWise && task.kind == TaskKind::Segmentation && task.external.empty()) {
      require(task.model.has_value(), ErrorKind::Usage, "segmentation task '" + task.id + "' has no model");
      dm = make_dataset_models(*task.model, scenes, root.string());
    }
    std::vector<SceneVerdict> part(scenes.size());
    parallel_for(scenes.size(), options.threads, [&](std::size_t i) {
      part[i] = evaluate_scene(scenes[i], task, mode, options, dm ? &*dm : nullptr);
    });
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

VerdictStore::VerdictStore(std::filesystem::path path) : path_(std::move(path)) {}

void VerdictStore::append(const SceneVerdict& v) { append(std::vector<SceneVerdict>{v}); }

void VerdictStore::append(const std::vector<SceneVerdict>& vs) {
  std::lock_guard lock(mu_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream f(path_, std::ios::app | std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot open verdict store " + path_.string());
  for (const auto& v : vs) f << verdict_to_json(v) << '\n';
  f.flush();
  require(static_cast<bool>(f), ErrorKind::Io, "write failed: " + path_.string());
}

std::vector<SceneVerdict> VerdictStore::load() const {
  std::lock_guard lock(mu_);
  std::vector<SceneVerdict> out;
  if (!std::filesystem::exists(path_)) return out;
  std::ifstream f(path_, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot read verdict store " + path_.string());
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    SceneVerdict v = verdict_from_json(line);
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& o) { return verdict_key(o) == verdict_key(v); });
    if (it == out.end()) out.push_back(std::move(v));
    else it->human.insert(it->human.end(), v.human.begin(), v.human.end());  // auto scores stay first-written
  }
  return out;
}

std::vector<SceneVerdict> record_human_verdict(VerdictStore& store, const std::string& scene_id,
                                               const std::string& task, const HumanVerdict& verdict,
                                               const std::string& mode) {
  std::vector<SceneVerdict> updated;
  std::vector<SceneVerdict> lines;
  for (auto& v : store.load()) {
    if (v.scene_id != scene_id || v.task != task || (!mode.empty() && v.mode != mode)) continue;
    SceneVerdict line = v;
    line.human = {verdict};
    lines.push_back(std::move(line));
    v.human.push_back(verdict);
    updated.push_back(std::move(v));
  }
  require(!updated.empty(), ErrorKind::Data,
          "no evaluated record for scene '" + scene_id + "' and task '" + task + "'" +
              (mode.empty() ? std::string() : " in mode '" + mode + "'"));
  store.append(lines);
  return updated;
}

// ---------------------------------------------------------------- aggregates

const char* to_string(Suitability s) {
  switch (s) {
    case Suitability::Suitable: return "SUITABLE";
    case Suitability::Ambiguous: return "AMBIGUOUS";
    case Suitability::Unsuitable: return "UNSUITABLE";
  }
  return "?";
}

Suitability classify(double pass_fraction, double theta) {
  if (pass_fraction >= theta) return Suitability::Suitable;
  if (pass_fraction >= 0.5) return Suitability::Ambiguous;
  return Suitability::Unsuitable;
}

TaskSuitabilityReport aggregate_suitability(const std::vector<SceneVerdict>& verdicts, const std::string& task,
                                            double theta) {
  TaskSuitabilityReport r;
  r.task = task;
  r.theta = theta;
  int seen = 0, agree = 0;
  for (const auto& v : verdicts) {
    if (v.task != task) continue;
    ++seen;
    if (!v.error.empty()) {
      ++r.n_skipped;
      continue;
    }
    auto& m = r.modes[v.mode];
    ++m.n_scenes;
    m.n_pass += v.auto_pass;
    m.mean_score_lr += v.score_lr.primary;
    m.mean_score_bicubic += v.score_bicubic.primary;
    for (const auto& h : v.human) {
      if (h.verdict == HumanJudgement::Unclear) continue;
      ++r.n_human;
      agree += (h.verdict == HumanJudgement::Better) == v.auto_pass;
    }
  }
  require(seen > 0, ErrorKind::Data, "no verdicts for task '" + task + "'");
  r.pass_fraction = -1.0;
  for (auto& [name, m] : r.modes) {
    m.pass_fraction = static_cast<double>(m.n_pass) / m.n_scenes;
    m.mean_score_lr /= m.n_scenes;
    m.mean_score_bicubic /= m.n_scenes;
    m.label = classify(m.pass_fraction, theta);
    if (m.pass_fraction > r.pass_fraction) {
      r.pass_fraction = m.pass_fraction;
      r.best_mode = name;
    }
  }
  if (r.modes.empty()) r.pass_fraction = 0.0;
  r.label = classify(r.pass_fraction, theta);
  if (r.n_human > 0) r.human_agreement = static_cast<double>(agree) / r.n_human;
  return r;
}

std::string report_to_json(const TaskSuitabilityReport& r) {
  json modes = json::object();
  for (const auto& [name, m] : r.modes)
    modes[name] = {{"n_scenes", m.n_scenes},
                   {"n_pass", m.n_pass},
                   {"pass_fraction", m.pass_fraction},
                   {"mean_score_lr", m.mean_score_lr},
                   {"mean_score_bicubic", m.mean_score_bicubic},
                   {"label", to_string(m.label)}};
  json j{{"task", r.task},   {"theta", r.theta},         {"n_skipped", r.n_skipped}, {"best_mode", r.best_mode},
         {"pass_fraction", r.pass_fraction}, {"label", to_string(r.label)}, {"modes", modes}, {"n_human", r.n_human}};
  if (r.human_agreement) j["human_agreement"] = *r.human_agreement;
  return j.dump(2);
}

}  // namespace srtask
