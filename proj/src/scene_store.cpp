// SPDX-License-Identifier: Apache-2.0
#include "srtask/scene_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <set>

#include <json.hpp>

#include "srtask/error.hpp"
#include "srtask/image_io.hpp"

namespace srtask {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kRawMagic[4] = {'S', 'R', 'T', 'R'};
constexpr std::uint32_t kRawVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) fail(ErrorKind::Data, "truncated raw raster");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::optional<RasterMeta> read_sidecar(const fs::path& path) {
  fs::path sidecar = path;
  sidecar += ".json";
  if (!fs::exists(sidecar)) return std::nullopt;
  json j = json::parse(io::read_text(sidecar), nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::Data, "malformed sidecar " + sidecar.string());
  RasterMeta meta;
  meta.gsd = j.value("gsd", 0.0);
  if (j.contains("bands")) meta.bands = j.at("bands").get<std::vector<std::string>>();
  return meta;
}

Raster raster_from_png(const io::PngImage& png, const RasterMeta& meta) {
  std::vector<std::string> names = meta.bands;
  if (names.empty()) {
    for (int c = 0; c < png.channels; ++c) names.push_back("B" + std::to_string(c + 1));
  }
  require(static_cast<int>(names.size()) == png.channels, ErrorKind::Data,
          "band list has " + std::to_string(names.size()) + " names for " + std::to_string(png.channels) +
              " png channels");
  Raster r(png.width, png.height, names, meta.gsd);
  const std::size_t n = r.plane_size();
  for (int c = 0; c < png.channels; ++c) {
    auto dst = r.band(c);
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(png.samples[i * png.channels + c]);
  }
  return r;
}

Raster load_single(const fs::path& path, const std::optional<RasterMeta>& meta) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "missing file " + path.string());
  const auto ext = path.extension().string();
  if (ext == ".raw") {
    Raster r = decode_raw(io::read_file(path));
    if (meta && meta->gsd > 0.0) r.set_gsd(meta->gsd);
    return r;
  }
  if (ext == ".png") {
    RasterMeta m;
    if (auto side = read_sidecar(path)) m = *side;
    if (meta) {
      if (meta->gsd > 0.0) m.gsd = meta->gsd;
      if (!meta->bands.empty()) m.bands = meta->bands;
    }
    require(m.gsd > 0.0, ErrorKind::Data, "non-positive or missing gsd for " + path.string());
    return raster_from_png(io::read_png(path), m);
  }
  fail(ErrorKind::Data, "unsupported raster format " + path.string());
}

Raster load_stack(const fs::path& dir, std::span<const std::string> bands, const std::optional<RasterMeta>& meta) {
  std::vector<std::string> names(bands.begin(), bands.end());
  if (names.empty() && meta) names = meta->bands;
  if (names.empty()) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto ext = e.path().extension().string();
      if (ext == ".png" || ext == ".raw") names.push_back(e.path().stem().string());
    }
    std::sort(names.begin(), names.end());
  }
  require(!names.empty(), ErrorKind::Data, "no band files in " + dir.string());
  std::vector<Raster> planes;
  for (const auto& b : names) {
    fs::path p = dir / (b + ".png");
    if (!fs::exists(p)) p = dir / (b + ".raw");
    if (!fs::exists(p)) fail(ErrorKind::Data, "missing band " + b + " in " + dir.string());
    std::optional<RasterMeta> m = meta;
    if (m) m->bands = {b};
    else m = RasterMeta{0.0, {b}};
    Raster r = load_single(p, m);
    require(r.channels() == 1, ErrorKind::Data, "band file " + p.string() + " has more than one channel");
    planes.push_back(std::move(r));
  }
  const Raster& first = planes.front();
  Raster out(first.width(), first.height(), names, first.gsd());
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const Raster& p = planes[i];
    require(p.width() == first.width() && p.height() == first.height(), ErrorKind::Data,
            "dimension mismatch across bands in " + dir.string());
    std::copy(p.band(0).begin(), p.band(0).end(), out.band(static_cast<int>(i)).begin());
  }
  return out;
}

std::vector<fs::path> sorted_rasters(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".raw")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return files;
}

fs::path find_raster(const fs::path& stem) {
  for (const char* ext : {".png", ".raw"}) {
    fs::path p = stem;
    p += ext;
    if (fs::exists(p)) return p;
  }
  fail(ErrorKind::Io, "missing file " + stem.string() + ".png");
}

void scale_values(Raster& r, double factor) {
  if (factor == 1.0) return;
  for (double& v : r.pixels()) v *= factor;
}

}  // namespace

std::vector<std::uint8_t> encode_raw(const Raster& raster) {
  raster.validate();
  ByteWriter w;
  w.bytes(kRawMagic, 4);
  w.u32(kRawVersion);
  w.u32(static_cast<std::uint32_t>(raster.width()));
  w.u32(static_cast<std::uint32_t>(raster.height()));
  w.u32(static_cast<std::uint32_t>(raster.channels()));
  w.f64(raster.gsd());
  for (const auto& b : raster.bands()) {
    require(b.size() < 65536, ErrorKind::Data, "band name too long");
    w.u16(static_cast<std::uint16_t>(b.size()));
    w.bytes(b.data(), b.size());
  }
  w.u8(raster.nodata() ? 1 : 0);
  for (double v : raster.pixels()) w.f32(static_cast<float>(v));
  if (raster.nodata()) w.bytes(raster.nodata()->data.data(), raster.nodata()->size());
  return w.take();
}

Raster decode_raw(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.bytes(4);
  require(std::memcmp(magic.data(), kRawMagic, 4) == 0, ErrorKind::Data, "not a raw raster (bad magic)");
  require(r.u32() == kRawVersion, ErrorKind::Data, "unsupported raw raster version");
  const int w = static_cast<int>(r.u32());
  const int h = static_cast<int>(r.u32());
  const int c = static_cast<int>(r.u32());
  const double gsd = r.f64();
  require(w > 0 && h > 0 && c > 0, ErrorKind::Data, "raw raster has empty dimensions");
  require(std::isfinite(gsd) && gsd > 0.0, ErrorKind::Data, "non-positive gsd in raw raster");
  std::vector<std::string> names;
  for (int i = 0; i < c; ++i) {
    const auto len = r.u16();
    auto s = r.bytes(len);
    names.emplace_back(s.begin(), s.end());
  }
  const bool has_nodata = r.u8() != 0;
  Raster out(w, h, names, gsd);
  for (double& v : out.pixels()) v = static_cast<double>(r.f32());
  if (has_nodata) {
    Mask m(w, h);
    auto s = r.bytes(m.size());
    std::copy(s.begin(), s.end(), m.data.begin());
    out.set_nodata(std::move(m));
  }
  require(r.done(), ErrorKind::Data, "trailing bytes in raw raster");
  out.validate();
  return out;
}

Raster load_raster(const fs::path& path, std::span<const std::string> bands, const std::optional<RasterMeta>& meta) {
  Raster r = fs::is_directory(path) ? load_stack(path, bands, meta) : load_single(path, meta);
  r.validate();
  if (bands.empty()) return r;
  for (const auto& b : bands) require(r.band_index(b) >= 0, ErrorKind::Data, "missing band " + b + " in " + path.string());
  return r.select(bands);
}

void save_raster(const Raster& raster, const fs::path& path, int png_bit_depth) {
  const auto ext = path.extension().string();
  if (ext == ".raw") {
    io::write_file(path, encode_raw(raster));
    return;
  }
  require(ext == ".png", ErrorKind::Data, "unsupported raster format " + path.string());
  require(png_bit_depth == 8 || png_bit_depth == 16, ErrorKind::Data, "png bit depth must be 8 or 16");
  raster.validate();
  io::PngImage png;
  png.width = raster.width();
  png.height = raster.height();
  png.channels = raster.channels();
  png.bit_depth = png_bit_depth;
  const double maxv = png_bit_depth == 16 ? 65535.0 : 255.0;
  png.samples.resize(raster.plane_size() * raster.channels());
  for (int c = 0; c < raster.channels(); ++c) {
    auto src = raster.band(c);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double v = std::clamp(std::round(src[i]), 0.0, maxv);
      png.samples[i * png.channels + c] = static_cast<std::uint16_t>(v);
    }
  }
  io::write_png(path, png);
  json side = {{"gsd", raster.gsd()}, {"bands", raster.bands()}};
  fs::path sidecar = path;
  sidecar += ".json";
  io::write_text(sidecar, side.dump(2) + "\n");
}

Mask load_mask(const fs::path& path) {
  io::PngImage png = io::read_png(path);
  const int half = png.bit_depth == 16 ? 32768 : 128;
  Mask m(png.width, png.height);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = png.samples[i * png.channels] >= half ? 1 : 0;
  return m;
}

void save_mask(const Mask& mask, const fs::path& path) {
  io::PngImage png;
  png.width = mask.width;
  png.height = mask.height;
  png.channels = 1;
  png.bit_depth = 8;
  png.samples.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) png.samples[i] = mask.data[i] ? 255 : 0;
  io::write_png(path, png);
}

double percentile(std::vector<double> values, double p) {
  require(!values.empty(), ErrorKind::Data, "percentile of empty set");
  require(p >= 0.0 && p <= 100.0, ErrorKind::Usage, "percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

NormalizedRaster normalize_radiometry(const Raster& raster, double p_low, double p_high) {
  require(p_low < p_high, ErrorKind::Usage, "p_low must be below p_high");
  require(!raster.empty(), ErrorKind::Data, "cannot normalize an empty raster");
  NormalizedRaster out{raster, {}};
  const auto& nodata = raster.nodata();
  for (int c = 0; c < raster.channels(); ++c) {
    auto src = raster.band(c);
    std::vector<double> valid;
    valid.reserve(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!nodata || !nodata->data[i]) valid.push_back(src[i]);
    }
    BandNormalization bn;
    if (valid.empty()) {
      bn.degenerate = true;
    } else {
      bn.low = percentile(valid, p_low);
      bn.high = percentile(std::move(valid), p_high);
      bn.degenerate = !(bn.high > bn.low);
    }
    auto dst = out.raster.band(c);
    if (bn.degenerate) {
      bn.gain = 0.0;
      bn.offset = 0.5;
      std::fill(dst.begin(), dst.end(), 0.5);
    } else {
      bn.gain = 1.0 / (bn.high - bn.low);
      bn.offset = -bn.low * bn.gain;
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::clamp((src[i] - bn.low) * bn.gain, 0.0, 1.0);
    }
    out.bands.push_back(bn);
  }
  return out;
}

void Scene::validate() const {
  require(!lr_images.empty(), ErrorKind::Data, "scene " + id + " has no LR images");
  require(scale >= 1, ErrorKind::Data, "scene " + id + " has non-positive scale");
  require(reference_lr < lr_images.size(), ErrorKind::Data, "scene " + id + " reference LR out of range");
  hr.validate();
  const Raster& first = lr_images.front();
  for (const auto& lr : lr_images) {
    lr.validate();
    require(lr.width() == first.width() && lr.height() == first.height(), ErrorKind::Data,
            "scene " + id + " LR images differ in size");
    require(std::abs(lr.gsd() - first.gsd()) <= 1e-9 * first.gsd(), ErrorKind::Data,
            "scene " + id + " LR images differ in gsd");
    require(lr.bands() == hr.bands(), ErrorKind::Data, "scene " + id + " LR and HR bands differ");
  }
  require(hr.width() == scale * first.width() && hr.height() == scale * first.height(), ErrorKind::Data,
          "scene " + id + ": HR dims " + std::to_string(hr.width()) + "x" + std::to_string(hr.height()) +
              " are not " + std::to_string(scale) + "x the LR dims");
  require(std::abs(hr.gsd() * scale - first.gsd()) <= 0.01 * first.gsd(), ErrorKind::Data,
          "scene " + id + ": HR gsd times scale does not match LR gsd within 1%");
}

Raster compose_rgb(const Raster& raster) {
  static const std::vector<std::string> kOrder = {"B04", "B03", "B02"};
  for (const auto& b : kOrder) require(raster.band_index(b) >= 0, ErrorKind::Data, "missing band " + b + " for RGB composite");
  return normalize_radiometry(raster.select(kOrder)).raster;
}

Raster compose_rgb(const Scene& scene) { return compose_rgb(scene.hr); }

SceneMeta load_scene_meta(const fs::path& scene_dir) {
  const fs::path p = scene_dir / "meta.json";
  if (!fs::exists(p)) fail(ErrorKind::Io, "missing file " + p.string());
  json j = json::parse(io::read_text(p), nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::Data, "malformed " + p.string());
  SceneMeta m;
  try {
    m.gsd_lr = j.at("gsd_lr").get<double>();
    m.gsd_hr = j.at("gsd_hr").get<double>();
    m.scale = j.at("scale").get<int>();
    m.bands = j.at("bands").get<std::vector<std::string>>();
    m.quantification = j.value("quantification", 1.0);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, "bad meta.json in " + scene_dir.string() + ": " + e.what());
  }
  require(m.gsd_lr > 0.0 && m.gsd_hr > 0.0, ErrorKind::Data, "non-positive gsd in " + p.string());
  require(m.quantification > 0.0, ErrorKind::Data, "non-positive quantification in " + p.string());
  return m;
}

Scene load_scene(const fs::path& root, const std::string& id, std::span<const std::string> bands) {
  const fs::path dir = root / id;
  const SceneMeta meta = load_scene_meta(dir);
  Scene s;
  s.id = id;
  s.scale = meta.scale;
  for (const auto& f : sorted_rasters(dir / "lr")) {
    s.lr_images.push_back(load_raster(f, bands, RasterMeta{meta.gsd_lr, meta.bands}));
  }
  s.hr = load_raster(find_raster(dir / "hr"), bands, RasterMeta{meta.gsd_hr, meta.bands});
  const double inv = 1.0 / meta.quantification;
  for (auto& lr : s.lr_images) scale_values(lr, inv);
  scale_values(s.hr, inv);
  s.validate();
  return s;
}

void save_scene(const Scene& scene, const fs::path& root, double quantification, int png_bit_depth) {
  scene.validate();
  const fs::path dir = root / scene.id;
  fs::create_directories(dir / "lr");
  auto quantize = [&](const Raster& r) {
    Raster q = r;
    scale_values(q, quantification);
    return q;
  };
  for (std::size_t k = 0; k < scene.lr_images.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", k);
    save_raster(quantize(scene.lr_images[k]), dir / "lr" / name, png_bit_depth);
  }
  save_raster(quantize(scene.hr), dir / "hr.png", png_bit_depth);
  json meta = {{"gsd_lr", scene.lr().gsd()},
               {"gsd_hr", scene.hr.gsd()},
               {"scale", scene.scale},
               {"bands", scene.hr.bands()},
               {"quantification", quantification}};
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

std::vector<std::string> DatasetManifest::ids(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& e : scenes) {
    if (split.empty() || e.split == split) out.push_back(e.id);
  }
  return out;
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path p = root / "manifest.json";
  if (!fs::exists(p)) fail(ErrorKind::Io, "missing file " + p.string());
  json j = json::parse(io::read_text(p), nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::Data, "malformed " + p.string());
  DatasetManifest m;
  m.root = root;
  try {
    m.bands = j.value("bands", std::vector<std::string>{});
    m.provenance = j.value("provenance", std::string{});
    for (const auto& e : j.at("scenes")) m.scenes.push_back({e.at("id").get<std::string>(), e.value("split", "train")});
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, "bad manifest " + p.string() + ": " + e.what());
  }
  std::set<std::string> seen;
  for (const auto& e : m.scenes) {
    require(seen.insert(e.id).second, ErrorKind::Data, "duplicate scene id " + e.id);
    require(e.split == "train" || e.split == "val" || e.split == "test", ErrorKind::Data,
            "scene " + e.id + " has unknown split " + e.split);
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest) {
  json scenes = json::array();
  for (const auto& e : manifest.scenes) scenes.push_back({{"id", e.id}, {"split", e.split}});
  json j = {{"root", "."}, {"bands", manifest.bands}, {"scenes", scenes}, {"provenance", manifest.provenance}};
  io::write_text(manifest.root / "manifest.json", j.dump(2) + "\n");
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<std::string> seen;
  for (const auto& e : manifest.scenes) {
    require(seen.insert(e.id).second, ErrorKind::Data, "duplicate scene id " + e.id);
    load_scene(manifest.root, e.id, manifest.bands);
  }
}

}  // namespace srtask
