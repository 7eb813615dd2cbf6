// SPDX-License-Identifier: Apache-2.0
#include "srtask/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "srtask/error.hpp"
#include "srtask/image_io.hpp"
#include "srtask/log.hpp"
#include "srtask/resample.hpp"
#include "srtask/rng.hpp"

namespace srtask {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct BandLook {
  double background, road, building, texture_weight;
};

// Rough reflectances: vegetated background bright in NIR, dark asphalt,
// bright roofs.
BandLook look_for(const std::string& band) {
  if (band == "B02") return {0.30, 0.22, 0.60, 0.6};
  if (band == "B03") return {0.34, 0.22, 0.62, 0.8};
  if (band == "B04") return {0.38, 0.23, 0.66, 0.9};
  return {0.45, 0.20, 0.70, 1.0};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (i + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

int draw_count(Rng& rng, const Range& r) {
  const int lo = static_cast<int>(std::lround(r.lo)), hi = static_cast<int>(std::lround(r.hi));
  return rng.uniform_int(lo, std::max(lo, hi));
}

// Two octaves of smooth value noise in [-1, 1].
RealGrid value_noise(int w, int h, double scale, Rng& rng) {
  RealGrid out(w, h);
  double norm = 0.0;
  for (int octave = 0; octave < 2; ++octave) {
    const double s = std::max(1.0, scale / (1 << octave));
    const double amp = 1.0 / (1 << octave);
    const int gw = static_cast<int>(std::ceil(w / s)) + 2, gh = static_cast<int>(std::ceil(h / s)) + 2;
    std::vector<double> g(static_cast<std::size_t>(gw) * gh);
    for (double& v : g) v = rng.uniform(-1.0, 1.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double fx = (x + 0.5) / s, fy = (y + 0.5) / s;
        const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
        double tx = fx - ix, ty = fy - iy;
        tx = tx * tx * (3 - 2 * tx);
        ty = ty * ty * (3 - 2 * ty);
        const auto at = [&](int a, int b) { return g[static_cast<std::size_t>(b) * gw + a]; };
        const double top = at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx;
        const double bot = at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx;
        out.at(x, y) += amp * (top * (1 - ty) + bot * ty);
      }
    norm += amp;
  }
  for (double& v : out.data) v /= norm;
  return out;
}

Point edge_point(Rng& rng, int side, int w, int h) {
  switch (side) {
    case 0: return {rng.uniform(0, w), -2.0};
    case 1: return {w + 2.0, rng.uniform(0, h)};
    case 2: return {rng.uniform(0, w), h + 2.0};
    default: return {-2.0, rng.uniform(0, h)};
  }
}

// Edge-to-edge polyline with `inner` random interior vertices.
RoadShape random_line(Rng& rng, int w, int h, int inner, const Range& width) {
  RoadShape r;
  const int a = rng.uniform_int(0, 3);
  const int b = (a + rng.uniform_int(1, 3)) % 4;
  r.vertices.push_back(edge_point(rng, a, w, h));
  for (int k = 0; k < inner; ++k) r.vertices.push_back({rng.uniform(0.15 * w, 0.85 * w), rng.uniform(0.15 * h, 0.85 * h)});
  r.vertices.push_back(edge_point(rng, b, w, h));
  r.width = rng.uniform(width.lo, width.hi);
  return r;
}

// Fraction of a 4x4 subpixel grid within half-width of the line.
RealGrid coverage(const RoadShape& line, int w, int h) {
  RealGrid cov(w, h);
  const double half = 0.5 * line.width;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = polyline_distance(line.vertices, x + 0.5, y + 0.5);
      if (d > half + 1.0) continue;
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx)
          hits += polyline_distance(line.vertices, x + (sx + 0.5) / 4, y + (sy + 0.5) / 4) <= half;
      cov.at(x, y) = hits / 16.0;
    }
  return cov;
}

Range range_from(const json& j, const char* key, Range def) {
  if (!j.contains(key)) return def;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 2) fail(ErrorKind::Usage, std::string("synth spec field '") + key + "' must be [lo, hi]");
  return {v[0], v[1]};
}

}  // namespace

double polyline_distance(const std::vector<Point>& line, double px, double py) {
  double best = INFINITY;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double ax = line[i].x, ay = line[i].y, bx = line[i + 1].x, by = line[i + 1].y;
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::hypot(px - (ax + t * dx), py - (ay + t * dy)));
  }
  return best;
}

void validate_spec(const SynthSpec& s) {
  require(s.scale >= 2, ErrorKind::Usage, "synth scale must be at least 2");
  require(s.width > 0 && s.height > 0 && s.width % s.scale == 0 && s.height % s.scale == 0, ErrorKind::Usage,
          "synth canvas must be positive and divisible by the scale");
  require(s.hr_gsd > 0, ErrorKind::Usage, "synth hr_gsd must be positive");
  require(!s.bands.empty(), ErrorKind::Usage, "synth spec lists no bands");
  for (const Range* r : {&s.road_count, &s.road_width, &s.building_count, &s.building_size, &s.clutter_count,
                         &s.clutter_width})
    require(r->lo >= 0 && r->lo <= r->hi, ErrorKind::Usage, "synth ranges need 0 <= lo <= hi");
  require((s.road_width.lo >= 1 && s.clutter_width.lo >= 1) || (s.road_count.hi == 0 && s.clutter_count.hi == 0),
          ErrorKind::Usage, "line widths must be at least 1 px");
  require(s.building_size.lo >= 1 || s.building_count.hi == 0, ErrorKind::Usage, "building size must be >= 1 px");
  require(s.building_gap >= 1, ErrorKind::Usage, "building gap must be at least 1 px");
  require(s.lr_count >= 1, ErrorKind::Usage, "lr_count must be at least 1");
  require(s.train_fraction >= 0 && s.val_fraction >= 0 && s.train_fraction + s.val_fraction <= 1.0, ErrorKind::Usage,
          "split fractions must be non-negative and sum to at most 1");
}

SynthSpec synth_spec_from_json(const std::string& text) {
  SynthSpec s;
  try {
    const json j = json::parse(text);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    s.scale = j.value("scale", s.scale);
    s.hr_gsd = j.value("hr_gsd", s.hr_gsd);
    s.bands = j.value("bands", s.bands);
    s.road_count = range_from(j, "road_count", s.road_count);
    s.road_width = range_from(j, "road_width", s.road_width);
    s.building_count = range_from(j, "building_count", s.building_count);
    s.building_size = range_from(j, "building_size", s.building_size);
    s.building_gap = j.value("building_gap", s.building_gap);
    s.clutter_count = range_from(j, "clutter_count", s.clutter_count);
    s.clutter_width = range_from(j, "clutter_width", s.clutter_width);
    s.texture_amplitude = j.value("texture_amplitude", s.texture_amplitude);
    s.texture_scale = j.value("texture_scale", s.texture_scale);
    s.hr_noise = j.value("hr_noise", s.hr_noise);
    if (j.contains("shift")) {
      const auto& d = j["shift"];
      s.shift = {d.value("gain", 1.0), d.value("bias", 0.0), d.value("gamma", 1.0)};
    }
    s.blur_sigma = j.value("blur_sigma", s.blur_sigma);
    s.lr_noise = j.value("lr_noise", s.lr_noise);
    s.lr_count = j.value("lr_count", s.lr_count);
    s.seed = j.value("seed", s.seed);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.val_fraction = j.value("val_fraction", s.val_fraction);
  } catch (const json::exception& e) {
    fail(ErrorKind::Usage, std::string("malformed synth spec: ") + e.what());
  }
  validate_spec(s);
  return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
  const auto r = [](const Range& x) { return json::array({x.lo, x.hi}); };
  json j = {{"width", s.width},
            {"height", s.height},
            {"scale", s.scale},
            {"hr_gsd", s.hr_gsd},
            {"bands", s.bands},
            {"road_count", r(s.road_count)},
            {"road_width", r(s.road_width)},
            {"building_count", r(s.building_count)},
            {"building_size", r(s.building_size)},
            {"building_gap", s.building_gap},
            {"clutter_count", r(s.clutter_count)},
            {"clutter_width", r(s.clutter_width)},
            {"texture_amplitude", s.texture_amplitude},
            {"texture_scale", s.texture_scale},
            {"hr_noise", s.hr_noise},
            {"shift", {{"gain", s.shift.gain}, {"bias", s.shift.bias}, {"gamma", s.shift.gamma}}},
            {"blur_sigma", s.blur_sigma},
            {"lr_noise", s.lr_noise},
            {"lr_count", s.lr_count},
            {"seed", s.seed},
            {"train_fraction", s.train_fraction},
            {"val_fraction", s.val_fraction}};
  return j.dump(2);
}

void apply_domain_shift(Raster& raster, const DomainShift& d) {
  for (double& v : raster.pixels()) v = std::clamp(d.gain * std::pow(std::max(v, 0.0), d.gamma) + d.bias, 0.0, 1.0);
}

SynthScene generate_scene(const SynthSpec& spec, Domain domain, const std::string& id) {
  validate_spec(spec);
  const int w = spec.width, h = spec.height;
  Rng rng(spec.seed);
  Rng geo = rng.fork(1), tex = rng.fork(2), noise = rng.fork(3);
  const std::uint64_t lr_seed = rng.next_u64();

  SynthScene out;
  const int n_clutter = draw_count(geo, spec.clutter_count);
  for (int k = 0; k < n_clutter; ++k) out.clutter_shapes.push_back(random_line(geo, w, h, 0, spec.clutter_width));
  const int n_roads = draw_count(geo, spec.road_count);
  for (int k = 0; k < n_roads; ++k) out.road_shapes.push_back(random_line(geo, w, h, geo.uniform_int(1, 2), spec.road_width));

  out.roads = Mask(w, h);
  RealGrid road_cov(w, h), clutter_cov(w, h);
  for (const auto& r : out.road_shapes) {
    const RealGrid c = coverage(r, w, h);
    for (std::size_t i = 0; i < c.size(); ++i) road_cov.data[i] = std::max(road_cov.data[i], c.data[i]);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (polyline_distance(r.vertices, x + 0.5, y + 0.5) <= 0.5 * r.width) out.roads.at(x, y) = 1;
  }
  for (const auto& r : out.clutter_shapes) {
    const RealGrid c = coverage(r, w, h);
    for (std::size_t i = 0; i < c.size(); ++i) clutter_cov.data[i] = std::max(clutter_cov.data[i], c.data[i]);
  }

  // Buildings by rejection sampling: clear of roads and of each other.
  out.buildings = Mask(w, h);
  Mask blocked(w, h);
  for (std::size_t i = 0; i < blocked.size(); ++i) blocked.data[i] = road_cov.data[i] > 0.0;
  const int n_buildings = draw_count(geo, spec.building_count);
  const int g = spec.building_gap;
  for (int k = 0, attempts = 0; k < n_buildings && attempts < 2000; ++attempts) {
    const int bw = static_cast<int>(std::lround(geo.uniform(spec.building_size.lo, spec.building_size.hi)));
    const int bh = static_cast<int>(std::lround(geo.uniform(spec.building_size.lo, spec.building_size.hi)));
    if (bw > w || bh > h) continue;
    const int x0 = geo.uniform_int(0, w - bw), y0 = geo.uniform_int(0, h - bh);
    bool free = true;
    for (int y = std::max(0, y0 - g); y < std::min(h, y0 + bh + g) && free; ++y)
      for (int x = std::max(0, x0 - g); x < std::min(w, x0 + bw + g); ++x)
        if (blocked.at(x, y)) {
          free = false;
          break;
        }
    if (!free) continue;
    out.building_shapes.push_back({x0, y0, x0 + bw, y0 + bh});
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) {
        out.buildings.at(x, y) = 1;
        blocked.at(x, y) = 1;
      }
    ++k;
  }
  if (static_cast<int>(out.building_shapes.size()) < n_buildings)
    log::warn("scene " + id + ": placed " + std::to_string(out.building_shapes.size()) + " of " +
              std::to_string(n_buildings) + " buildings");

  const RealGrid texture = value_noise(w, h, spec.texture_scale, tex);
  Raster hr(w, h, spec.bands, spec.hr_gsd);
  for (int c = 0; c < hr.channels(); ++c) {
    const BandLook look = look_for(spec.bands[c]);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        double v = look.background + spec.texture_amplitude * look.texture_weight * texture.data[i];
        v += (look.road - v) * clutter_cov.data[i];
        v += (look.road - v) * road_cov.data[i];
        if (out.buildings.data[i]) v = look.building + 0.3 * spec.texture_amplitude * texture.data[i];
        if (spec.hr_noise > 0) v += spec.hr_noise * noise.normal();
        hr.at(c, x, y) = std::clamp(v, 0.0, 1.0);
      }
  }
  if (domain == Domain::B) apply_domain_shift(hr, spec.shift);

  out.scene.id = id;
  out.scene.scale = spec.scale;
  for (int k = 0; k < spec.lr_count; ++k)
    out.scene.lr_images.push_back(degrade_simulate(hr, spec.scale, spec.blur_sigma, spec.lr_noise, mix_seed(lr_seed, k)));
  out.scene.hr = std::move(hr);
  out.scene.validate();
  return out;
}

DatasetManifest generate_corpus(const SynthSpec& spec, int n, Domain domain, const fs::path& root) {
  require(n >= 1, ErrorKind::Usage, "corpus needs at least one scene");
  validate_spec(spec);
  DatasetManifest m;
  m.root = root;
  m.bands = spec.bands;
  m.provenance = std::string("synthetic corpus, domain ") + (domain == Domain::A ? "A" : "B") + ", seed " +
                 std::to_string(spec.seed);
  const int n_train = static_cast<int>(std::lround(n * spec.train_fraction));
  const int n_val = static_cast<int>(std::lround(n * spec.val_fraction));
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%03d", i);
    SynthSpec si = spec;
    si.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(i));
    const SynthScene s = generate_scene(si, domain, id);
    save_scene(s.scene, root, 10000.0);
    save_mask(s.roads, root / id / "masks" / "roads.png");
    save_mask(s.buildings, root / id / "masks" / "buildings.png");
    m.scenes.push_back({id, i < n_train ? "train" : (i < n_train + n_val ? "val" : "test")});
  }
  io::write_text(root / "synth_spec.json", synth_spec_to_json(spec) + "\n");
  save_manifest(m);
  return m;
}

Mask load_target_mask(const fs::path& root, const std::string& id, const std::string& target) {
  return load_mask(root / id / "masks" / (target + ".png"));
}

std::vector<SegSample> hr_samples(std::span<const SynthScene> scenes, const std::string& target) {
  require(target == "roads" || target == "buildings", ErrorKind::Usage, "unknown target '" + target + "'");
  std::vector<SegSample> out;
  for (const auto& s : scenes) out.push_back({s.scene.hr, target == "roads" ? s.roads : s.buildings});
  return out;
}

}  // namespace srtask
