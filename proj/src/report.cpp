// SPDX-License-Identifier: Apache-2.0
#include "srtask/report.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>

#include <json.hpp>

#include "srtask/error.hpp"
#include "srtask/log.hpp"
#include "srtask/resample.hpp"

namespace srtask {

using json = nlohmann::json;
namespace fs = std::filesystem;

// -------------------------------------------------------------------- config

namespace {

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Usage, "config: '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  const json j = json::parse(text, nullptr, false);
  require(!j.is_discarded() && j.is_object(), ErrorKind::Usage, "config is not a JSON object");
  static const std::set<std::string> known = {"dataset", "tasks",   "adapt_modes",       "thresholds", "sr",
                                              "seed",    "split",   "reference_metrics", "threads",    "scale",
                                              "out"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) log::warn("config: ignoring unknown key '" + k + "'");

  RunConfig c;
  const std::string dataset = get_or<std::string>(j, "dataset", "", "config");
  if (!dataset.empty()) {
    c.dataset = resolve(dataset, base_dir);
  } else if (const char* env = std::getenv("SRTASK_DATA_ROOT"); env && *env) {
    c.dataset = env;
  } else {
    fail(ErrorKind::Usage, "config has no dataset and SRTASK_DATA_ROOT is not set");
  }

  if (j.contains("tasks")) {
    require(j["tasks"].is_array(), ErrorKind::Usage, "config: tasks must be an array");
    std::map<std::string, int> seen;
    for (const auto& t : j["tasks"]) {
      require(t.is_object(), ErrorKind::Usage, "config: every task must be an object");
      TaskEntry e;
      e.kind = parse_task_kind(get_or<std::string>(t, "kind", "", "task"));
      e.model = resolve(get_or<std::string>(t, "model", "", "task"), base_dir);
      e.bands = get_or<std::vector<std::string>>(t, "bands", {}, "task");
      e.n_keypoints = get_or<int>(t, "n_keypoints", 1000, "task");
      require(e.n_keypoints >= 1, ErrorKind::Usage, "config: n_keypoints must be positive");
      std::string id = get_or<std::string>(t, "id", "", "task");
      if (id.empty()) {
        id = to_string(e.kind);
        if (const int n = ++seen[id]; n > 1) id += "_" + std::to_string(n);
      }
      e.id = id;
      c.tasks.push_back(std::move(e));
    }
  }
  std::set<std::string> ids;
  for (const auto& t : c.tasks) require(ids.insert(t.id).second, ErrorKind::Usage, "config: duplicate task id " + t.id);

  if (j.contains("adapt_modes")) {
    c.adapt_modes.clear();
    for (const auto& m : get_or<std::vector<std::string>>(j, "adapt_modes", {}, "config"))
      c.adapt_modes.push_back(parse_adapt_mode(m));
    require(!c.adapt_modes.empty(), ErrorKind::Usage, "config: adapt_modes is empty");
  }
  if (j.contains("thresholds")) {
    const json& t = j["thresholds"];
    require(t.is_object(), ErrorKind::Usage, "config: thresholds must be an object");
    c.thresholds.theta = get_or<double>(t, "theta", 0.8, "thresholds");
    c.thresholds.epsilon_px = get_or<double>(t, "epsilon_px", 3.0, "thresholds");
    if (t.contains("mask") && !t["mask"].is_null()) c.thresholds.mask = get_or<double>(t, "mask", 0.5, "thresholds");
  }
  require(c.thresholds.theta > 0 && c.thresholds.theta <= 1, ErrorKind::Usage, "config: theta must be in (0, 1]");
  require(c.thresholds.epsilon_px >= 0, ErrorKind::Usage, "config: epsilon_px must be non-negative");
  if (c.thresholds.mask)
    require(*c.thresholds.mask > 0 && *c.thresholds.mask < 1, ErrorKind::Usage, "config: mask threshold must be in (0, 1)");

  if (j.contains("sr")) {
    const json& s = j["sr"];
    require(s.is_object(), ErrorKind::Usage, "config: sr must be an object");
    if (s.contains("weights")) {
      const json& w = s["weights"];
      c.sr_weights.alpha = get_or<double>(w, "alpha", 1.0, "sr.weights");
      c.sr_weights.beta = get_or<double>(w, "beta", 0.1, "sr.weights");
      c.sr_weights.gamma = get_or<double>(w, "gamma", 0.1, "sr.weights");
    }
    c.sr_weights.task_space = parse_task_space(get_or<std::string>(s, "space", "output", "sr"));
    const std::string norm = get_or<std::string>(s, "image_norm", "l1", "sr");
    require(norm == "l1" || norm == "l2", ErrorKind::Usage, "config: sr.image_norm must be l1 or l2");
    c.sr_weights.image_norm = norm == "l1" ? ImageNorm::L1 : ImageNorm::L2;
    validate_weights(c.sr_weights);
  }
  c.seed = get_or<std::uint64_t>(j, "seed", 1, "config");
  c.split = get_or<std::string>(j, "split", "test", "config");
  c.reference_metrics = get_or<bool>(j, "reference_metrics", false, "config");
  c.threads = get_or<int>(j, "threads", 0, "config");
  c.scale = get_or<int>(j, "scale", 0, "config");
  require(c.scale >= 0, ErrorKind::Usage, "config: scale must be non-negative");
  const std::string out = get_or<std::string>(j, "out", "", "config");
  if (!out.empty()) c.out = resolve(out, base_dir);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Usage, "config file not found: " + path.string());
  return parse_run_config(io::read_text(path), fs::absolute(path).parent_path());
}

void validate_run_config(const RunConfig& c) {
  require(fs::exists(c.dataset / "manifest.json"), ErrorKind::Usage,
          "dataset " + c.dataset.string() + " has no manifest.json");
  for (const auto& t : c.tasks) {
    if (t.kind == TaskKind::Segmentation)
      require(!t.model.empty(), ErrorKind::Usage, "segmentation task '" + t.id + "' needs a model");
    if (!t.model.empty()) require(fs::exists(t.model), ErrorKind::Usage, "model not found: " + t.model.string());
  }
}

std::string run_config_json(const RunConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.tasks)
    tasks.push_back({{"id", t.id},
                     {"kind", to_string(t.kind)},
                     {"model", t.model.string()},
                     {"bands", t.bands},
                     {"n_keypoints", t.n_keypoints}});
  json modes = json::array();
  for (auto m : c.adapt_modes) modes.push_back(to_string(m));
  json thr{{"theta", c.thresholds.theta}, {"epsilon_px", c.thresholds.epsilon_px}, {"mask", nullptr}};
  if (c.thresholds.mask) thr["mask"] = *c.thresholds.mask;
  const json j{{"dataset", c.dataset.string()},
               {"tasks", tasks},
               {"adapt_modes", modes},
               {"scale", c.scale},
               {"thresholds", thr},
               {"sr",
                {{"weights", {{"alpha", c.sr_weights.alpha}, {"beta", c.sr_weights.beta}, {"gamma", c.sr_weights.gamma}}},
                 {"space", to_string(c.sr_weights.task_space)},
                 {"image_norm", c.sr_weights.image_norm == ImageNorm::L1 ? "l1" : "l2"}}},
               {"seed", c.seed},
               {"split", c.split},
               {"reference_metrics", c.reference_metrics}};
  return j.dump();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(run_config_json(config))));
  return buf;
}

TaskSpec make_task_spec(const TaskEntry& e, const RunConfig& c) {
  TaskSpec t;
  t.id = e.id;
  t.kind = e.kind;
  t.bands = e.bands;
  t.n_keypoints = e.n_keypoints;
  if (!e.model.empty()) {
    // Segmentation descriptors load natively; anything else is an adapter.
    const json d = json::parse(io::read_text(e.model), nullptr, false);
    require(!d.is_discarded() && d.is_object(), ErrorKind::Data, "malformed descriptor " + e.model.string());
    if (e.kind == TaskKind::Segmentation && !d.contains("invoke")) {
      t.model = load_task_model(e.model);
      if (c.thresholds.mask) t.model->threshold = *c.thresholds.mask;
    } else {
      t.external = e.model;
    }
  }
  return t;
}

std::string metrics_json(const std::vector<TaskSuitabilityReport>& reports, const std::string& hash,
                         std::uint64_t seed) {
  json tasks = json::object();
  for (const auto& r : reports) tasks[r.task] = json::parse(report_to_json(r));
  const json j{{"config_hash", hash}, {"seed", seed}, {"tasks", tasks}};
  return j.dump(2) + "\n";
}

// --------------------------------------------------------------------- panel

namespace {

// 3x5 glyphs, one row per 3-bit group, top row in the high bits.
std::uint16_t glyph(char ch) {
  static const std::map<char, std::uint16_t> font = {
      {'0', 0b111101101101111}, {'1', 0b010110010010111}, {'2', 0b111001111100111}, {'3', 0b111001111001111},
      {'4', 0b101101111001001}, {'5', 0b111100111001111}, {'6', 0b111100111101111}, {'7', 0b111001001001001},
      {'8', 0b111101111101111}, {'9', 0b111101111001111}, {'A', 0b010101111101101}, {'B', 0b110101110101110},
      {'C', 0b011100100100011}, {'D', 0b110101101101110}, {'E', 0b111100110100111}, {'F', 0b111100110100100},
      {'G', 0b011100101101011}, {'H', 0b101101111101101}, {'I', 0b111010010010111}, {'J', 0b001001001101010},
      {'K', 0b101101110101101}, {'L', 0b100100100100111}, {'M', 0b101111111101101}, {'N', 0b110101101101101},
      {'O', 0b010101101101010}, {'P', 0b110101110100100}, {'Q', 0b010101101110011}, {'R', 0b110101110101101},
      {'S', 0b011100010001110}, {'T', 0b111010010010010}, {'U', 0b101101101101111}, {'V', 0b101101101101010},
      {'W', 0b101101111111101}, {'X', 0b101101010101101}, {'Y', 0b101101010010010}, {'Z', 0b111001010100111},
      {'.', 0b000000000000010}, {':', 0b000010000010000}, {'-', 0b000000111000000}, {'=', 0b000111000111000},
      {'_', 0b000000000000111}, {'/', 0b001001010100100}, {'%', 0b101001010100101}};
  const auto it = font.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  return it == font.end() ? 0 : it->second;
}

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> rgb;
  Canvas(int w_, int h_, std::uint8_t fill) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, fill) {}
  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(y) * w + x) * 3);
  }
  std::array<std::uint8_t, 3> get(int x, int y) const {
    const auto* p = rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3;
    return {p[0], p[1], p[2]};
  }
};

std::uint8_t to8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::array<std::uint8_t, 3> blend(std::array<std::uint8_t, 3> a, std::array<std::uint8_t, 3> b, double t) {
  std::array<std::uint8_t, 3> o;
  for (int i = 0; i < 3; ++i) o[i] = static_cast<std::uint8_t>(std::lround((1 - t) * a[i] + t * b[i]));
  return o;
}

std::array<std::uint8_t, 3> label_color(std::int32_t l) {
  std::uint64_t z = static_cast<std::uint64_t>(l) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return {static_cast<std::uint8_t>(64 + (z & 0xbf)), static_cast<std::uint8_t>(64 + ((z >> 8) & 0xbf)),
          static_cast<std::uint8_t>(64 + ((z >> 16) & 0xbf))};
}

void draw_text(Canvas& c, int x0, int y0, const std::string& text, int scale, int max_w) {
  int x = x0;
  for (char ch : text) {
    if (x + 3 * scale > x0 + max_w) break;
    const std::uint16_t g = glyph(ch);
    for (int r = 0; r < 5; ++r)
      for (int col = 0; col < 3; ++col)
        if (g >> (14 - (r * 3 + col)) & 1)
          for (int dy = 0; dy < scale; ++dy)
            for (int dx = 0; dx < scale; ++dx) c.set(x + col * scale + dx, y0 + r * scale + dy, {255, 255, 255});
    x += 4 * scale;
  }
}

// Display image on the HR grid: RGB composite when available, else band 0.
std::vector<std::array<std::uint8_t, 3>> display(const Raster& in, int scale_up) {
  Raster shown;
  const bool rgb = in.band_index("B04") >= 0 && in.band_index("B03") >= 0 && in.band_index("B02") >= 0;
  if (rgb) {
    shown = compose_rgb(in);
  } else {
    const std::vector<std::string> first{in.bands().front()};
    shown = normalize_radiometry(in.select(first)).raster;
  }
  const int w = in.width() * scale_up, h = in.height() * scale_up;
  std::vector<std::array<std::uint8_t, 3>> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = x / scale_up, sy = y / scale_up;
      auto& p = out[static_cast<std::size_t>(y) * w + x];
      if (rgb) p = {to8(shown.at(0, sx, sy)), to8(shown.at(1, sx, sy)), to8(shown.at(2, sx, sy))};
      else p.fill(to8(shown.at(0, sx, sy)));
    }
  return out;
}

}  // namespace

bool on_circle(int px, int py, double cx, double cy, int radius) {
  const long dx = px - std::lround(cx), dy = py - std::lround(cy);
  const long d4 = 4 * (dx * dx + dy * dy);
  return (2L * radius - 1) * (2L * radius - 1) <= d4 && d4 < (2L * radius + 1) * (2L * radius + 1);
}

io::PngImage panel_image(const Scene& scene, std::span<const BranchResult> results,
                         const std::vector<std::string>& labels, const PanelStyle& st) {
  require(results.size() >= 2, ErrorKind::Usage, "a panel needs at least two branch results");
  const int W = scene.hr.width(), H = scene.hr.height();
  for (const auto& r : results)
    require(output_width(r.on_hr_grid) == W && output_height(r.on_hr_grid) == H, ErrorKind::Data,
            "branch output is not on the HR grid");
  const int n = static_cast<int>(results.size());
  const int m = st.margin;
  const int header = 5 * st.label_scale + 4;
  Canvas c(n * W + (n + 1) * m, header + 3 * H + 4 * m, 24);
  const auto inputs = branch_inputs(scene);
  const double opacity = st.mask_opacity;
  const std::array<std::uint8_t, 3> mask_color{255, 40, 40}, point_color{255, 220, 0};

  for (int col = 0; col < n; ++col) {
    const BranchResult& r = results[col];
    const int x0 = m + col * (W + m);
    const int y_in = header + m, y_out = y_in + H + m, y_ov = y_out + H + m;
    if (col < static_cast<int>(labels.size())) draw_text(c, x0 + 1, 2, labels[col], st.label_scale, W - 1);

    const int bi = r.branch == Branch::LR ? 0 : r.branch == Branch::Bicubic ? 1 : 2;
    const auto img = display(inputs[bi], bi == 0 ? scene.scale : 1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const auto px = img[static_cast<std::size_t>(y) * W + x];
        c.set(x0 + x, y_in + y, px);
        c.set(x0 + x, y_ov + y, px);
      }

    if (const auto* s = std::get_if<SegMask>(&r.on_hr_grid)) {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const std::uint8_t g = to8(s->prob.at(x, y));
          c.set(x0 + x, y_out + y, {g, g, g});
          if (s->binary.at(x, y)) c.set(x0 + x, y_ov + y, blend(c.get(x0 + x, y_ov + y), mask_color, opacity));
        }
    } else if (const auto* k = std::get_if<KeypointSet>(&r.on_hr_grid)) {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) c.set(x0 + x, y_out + y, {0, 0, 0});
      const int rad = st.circle_radius;
      for (const auto& p : k->points) {
        const long cx = std::lround(p.x), cy = std::lround(p.y);
        for (long y = cy - rad; y <= cy + rad; ++y)
          for (long x = cx - rad; x <= cx + rad; ++x) {
            if (x < 0 || y < 0 || x >= W || y >= H || !on_circle(static_cast<int>(x), static_cast<int>(y), p.x, p.y, rad))
              continue;
            c.set(x0 + static_cast<int>(x), y_out + static_cast<int>(y), point_color);
            c.set(x0 + static_cast<int>(x), y_ov + static_cast<int>(y), point_color);
          }
      }
    } else {
      const auto& p = std::get<Partition>(r.on_hr_grid);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const auto lc = label_color(p.labels.at(x, y));
          c.set(x0 + x, y_out + y, lc);
          c.set(x0 + x, y_ov + y, blend(c.get(x0 + x, y_ov + y), lc, opacity));
        }
    }
  }

  io::PngImage png;
  png.width = c.w;
  png.height = c.h;
  png.channels = 3;
  png.bit_depth = 8;
  png.samples.assign(c.rgb.begin(), c.rgb.end());
  return png;
}

void render_panel(const Scene& scene, std::span<const BranchResult> results, const std::vector<std::string>& labels,
                  const fs::path& path, const std::map<std::string, std::string>& text, const PanelStyle& style) {
  io::PngImage png = panel_image(scene, results, labels, style);
  png.text = text;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_png(path, png);
}

}  // namespace srtask
