// SPDX-License-Identifier: Apache-2.0
#include "srtask/tasks.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <cstring>

#include <json.hpp>

#include "srtask/adapt.hpp"
#include "srtask/error.hpp"
#include "srtask/image_io.hpp"
#include "srtask/log.hpp"
#include "srtask/resample.hpp"
#include "srtask/rng.hpp"
#include "srtask/scene_store.hpp"
#include "srtask/tensor_store.hpp"

extern char** environ;

namespace srtask {
namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Segmentation: return "segmentation";
    case TaskKind::Keypoints: return "keypoints";
    case TaskKind::Partition: return "partition";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "segmentation") return TaskKind::Segmentation;
  if (s == "keypoints") return TaskKind::Keypoints;
  if (s == "partition") return TaskKind::Partition;
  fail(ErrorKind::Usage, "unknown task kind '" + s + "'");
}

TaskKind kind_of(const TaskOutput& out) { return static_cast<TaskKind>(out.index()); }

int output_width(const TaskOutput& out) {
  return std::visit(
      [](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, SegMask>) return o.prob.width;
        else if constexpr (std::is_same_v<T, KeypointSet>) return o.width;
        else return o.labels.width;
      },
      out);
}

int output_height(const TaskOutput& out) {
  return std::visit(
      [](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, SegMask>) return o.prob.height;
        else if constexpr (std::is_same_v<T, KeypointSet>) return o.height;
        else return o.labels.height;
      },
      out);
}

void validate_output(const TaskOutput& out) {
  const auto bad = [](const std::string& m) { fail(ErrorKind::Contract, m); };
  if (const auto* m = std::get_if<SegMask>(&out)) {
    if (!m->binary.same_dims(m->prob)) bad("mask binary and probability grids differ in size");
    for (std::size_t i = 0; i < m->prob.size(); ++i) {
      const double p = m->prob.data[i];
      if (!(p >= 0.0 && p <= 1.0)) bad("mask probability outside [0, 1]");
      if (m->binary.data[i] != (p >= m->threshold ? 1 : 0)) bad("binary mask disagrees with threshold");
    }
  } else if (const auto* k = std::get_if<KeypointSet>(&out)) {
    for (std::size_t i = 0; i < k->points.size(); ++i) {
      const auto& p = k->points[i];
      if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= k->width - 1 && p.y <= k->height - 1))
        bad("keypoint outside image bounds");
      if (!std::isfinite(p.score)) bad("non-finite keypoint score");
      if (i > 0 && p.score > k->points[i - 1].score) bad("keypoints not sorted by descending score");
    }
  } else {
    const auto& part = std::get<Partition>(out);
    std::vector<char> seen(static_cast<std::size_t>(std::max(part.count, 0)), 0);
    for (auto l : part.labels.data) {
      if (l < 0 || l >= part.count) bad("partition label out of range");
      seen[static_cast<std::size_t>(l)] = 1;
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) bad("partition labels are not contiguous");
  }
}

SegMask make_seg_mask(RealGrid prob, double threshold) {
  SegMask m;
  m.binary = Mask(prob.width, prob.height);
  for (std::size_t i = 0; i < prob.size(); ++i) m.binary.data[i] = prob.data[i] >= threshold ? 1 : 0;
  m.prob = std::move(prob);
  m.threshold = threshold;
  return m;
}

Partition compact_labels(const LabelGrid& labels) {
  Partition p;
  p.labels = LabelGrid(labels.width, labels.height);
  std::map<std::int32_t, std::int32_t> remap;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(labels.data[i], static_cast<std::int32_t>(remap.size()));
    p.labels.data[i] = it->second;
  }
  p.count = static_cast<int>(remap.size());
  return p;
}

// ---------------------------------------------------------------- model I/O

namespace {

json descriptor_json(const TaskModel& m, const std::string& weights_name) {
  json j;
  j["kind"] = to_string(m.kind);
  j["target"] = m.target;
  j["arch"] = {{"depth", m.net.config().depth}, {"width", m.net.config().width}, {"bands", m.bands}};
  j["weights_path"] = weights_name;
  j["training_gsd"] = m.training_gsd;
  j["threshold"] = m.threshold;
  if (m.adaptation)
    j["adaptation"] = {{"mode", m.adaptation->mode},
                       {"stats_source", m.adaptation->stats_source},
                       {"n_images", m.adaptation->n_images}};
  return j;
}

json read_json(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorKind::Io, "missing file " + p.string());
  try {
    return json::parse(io::read_text(p));
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, "malformed JSON in " + p.string() + ": " + e.what());
  }
}

TaskModel model_from_descriptor(const json& j, const fs::path& base) {
  try {
    TaskModel m;
    m.kind = parse_task_kind(j.at("kind").get<std::string>());
    require(m.kind == TaskKind::Segmentation, ErrorKind::Data, "weights models must be segmentation models");
    m.target = j.value("target", std::string("foreground"));
    const auto& arch = j.at("arch");
    m.bands = arch.at("bands").get<std::vector<std::string>>();
    require(!m.bands.empty(), ErrorKind::Data, "model descriptor lists no bands");
    m.training_gsd = j.at("training_gsd").get<double>();
    m.threshold = j.value("threshold", 0.5);
    UNetConfig cfg{arch.at("depth").get<int>(), arch.at("width").get<int>(), static_cast<int>(m.bands.size())};
    m.net = UNet(cfg, 0);
    fs::path wp = j.at("weights_path").get<std::string>();
    if (wp.is_relative()) wp = base / wp;
    assign_tensors(load_archive(wp), m.net.named_tensors());
    if (j.contains("adaptation")) {
      const auto& a = j["adaptation"];
      m.adaptation = AdaptationInfo{a.at("mode").get<std::string>(), a.value("stats_source", std::string()),
                                    a.value("n_images", std::int64_t{0})};
    }
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed model descriptor: ") + e.what());
  }
}

}  // namespace

void save_task_model(const TaskModel& model, const fs::path& descriptor) {
  fs::path weights = descriptor;
  weights.replace_extension(".srtw");
  const json j = descriptor_json(model, weights.filename().string());
  TaskModel copy = model;  // named_tensors() needs a mutable view
  save_archive(collect_tensors(copy.net.named_tensors(), j.dump()), weights);
  io::write_text(descriptor, j.dump(2) + "\n");
}

TaskModel load_task_model(const fs::path& descriptor) {
  return model_from_descriptor(read_json(descriptor), descriptor.parent_path());
}

// ---------------------------------------------------------------- segmentation

nn::Tensor model_input(const TaskModel& model, const Raster& raster) {
  for (const auto& b : model.bands)
    require(raster.band_index(b) >= 0, ErrorKind::Data, "raster lacks model input band " + b);
  const Raster sel = raster.select(model.bands);
  nn::Tensor t(1, sel.channels(), sel.height(), sel.width());
  std::copy(sel.pixels().begin(), sel.pixels().end(), t.v.begin());
  return t;
}

void check_gsd(const TaskModel& model, const Raster& raster) {
  if (model.training_gsd <= 0.0) return;
  const double rel = std::abs(raster.gsd() - model.training_gsd) / model.training_gsd;
  if (rel > 0.2) {
    std::ostringstream os;
    os << "input GSD " << raster.gsd() << " m differs from training GSD " << model.training_gsd << " m by "
       << static_cast<int>(std::lround(rel * 100)) << "%";
    log::warn(os.str());
  }
}

SegMask segmentation_infer(const TaskModel& model, const Raster& raster) {
  require(model.kind == TaskKind::Segmentation, ErrorKind::Usage, "model is not a segmentation model");
  check_gsd(model, raster);
  const nn::Tensor logits = model.net.infer_logits(model_input(model, raster));
  RealGrid prob(raster.width(), raster.height());
  for (std::size_t i = 0; i < prob.size(); ++i) prob.data[i] = nn::sigmoid(logits.v[i]);
  return make_seg_mask(std::move(prob), model.threshold);
}

double mask_iou(const Mask& a, const Mask& b) {
  require(a.same_dims(b), ErrorKind::Data, "mask dims differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a.data[i] && b.data[i]);
    uni += (a.data[i] || b.data[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SegTrainResult segmentation_train(std::span<const SegSample> train, std::span<const SegSample> val,
                                  const SegTrainConfig& cfg) {
  require(!train.empty(), ErrorKind::Data, "training split is empty");
  require(cfg.epochs >= 1 && cfg.steps_per_epoch >= 1 && cfg.batch >= 1, ErrorKind::Usage,
          "epochs, steps and batch must be positive");
  require(!cfg.bands.empty(), ErrorKind::Usage, "no input bands configured");

  TaskModel model;
  model.kind = TaskKind::Segmentation;
  model.target = cfg.target;
  model.bands = cfg.bands;
  UNetConfig arch = cfg.arch;
  arch.in_channels = static_cast<int>(cfg.bands.size());
  model.net = UNet(arch, cfg.seed);

  const int m = model.net.multiple();
  int min_side = cfg.crop;
  for (const auto& s : train) {
    require(s.mask.same_dims(s.image.width(), s.image.height()), ErrorKind::Data, "mask not aligned with image");
    for (auto v : s.mask.data) require(v <= 1, ErrorKind::Data, "mask is not binary");
    for (double v : s.image.pixels()) require(std::isfinite(v), ErrorKind::Data, "training image has non-finite pixels");
    min_side = std::min({min_side, s.image.width(), s.image.height()});
  }
  const int crop = min_side / m * m;
  require(crop >= m, ErrorKind::Data, "training images are smaller than the network minimum " + std::to_string(m));
  model.training_gsd = train.front().image.gsd();

  std::vector<nn::Tensor> inputs;
  inputs.reserve(train.size());
  for (const auto& s : train) inputs.push_back(model_input(model, s.image));

  Rng rng(cfg.seed ^ 0x5eedf00dULL);
  nn::Adam adam(cfg.lr);
  SegTrainResult result;
  UNet best = model.net;
  double best_iou = -1.0;
  const int c = arch.in_channels;
  const std::size_t plane = static_cast<std::size_t>(crop) * crop;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      nn::Tensor x(cfg.batch, c, crop, crop);
      std::vector<double> y(plane * cfg.batch);
      for (int b = 0; b < cfg.batch; ++b) {
        const int idx = rng.uniform_int(0, static_cast<int>(train.size()) - 1);
        const auto& s = train[idx];
        const int ox = rng.uniform_int(0, s.image.width() - crop);
        const int oy = rng.uniform_int(0, s.image.height() - crop);
        const bool invert = cfg.p_invert > 0.0 && rng.bernoulli(cfg.p_invert);
        const nn::Tensor& src = inputs[idx];
        for (int ch = 0; ch < c; ++ch)
          for (int yy = 0; yy < crop; ++yy)
            for (int xx = 0; xx < crop; ++xx) {
              const double v = src.at(0, ch, oy + yy, ox + xx);
              x.at(b, ch, yy, xx) = invert ? 1.0 - v : v;
            }
        for (int yy = 0; yy < crop; ++yy)
          for (int xx = 0; xx < crop; ++xx)
            y[plane * b + static_cast<std::size_t>(yy) * crop + xx] = s.mask.at(ox + xx, oy + yy);
      }

      nn::Pass pass{nn::BnMode::Train, {}};
      UNet::Tape tape;
      const nn::Tensor z = model.net.forward(x, pass, &tape);
      nn::Tensor dz = nn::Tensor::zeros_like(z);
      double loss = 0.0;
      const double inv_n = 1.0 / static_cast<double>(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        loss += nn::softplus(z.v[i]) - y[i] * z.v[i];
        dz.v[i] = (nn::sigmoid(z.v[i]) - y[i]) * inv_n;
      }
      loss *= inv_n;
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << " step " << step << " (loss " << loss << ", lr " << cfg.lr
           << "); lower the learning rate";
        fail(ErrorKind::Numeric, os.str());
      }
      UNet grads = UNet::zeros_like(model.net);
      model.net.backward(tape, &dz, nullptr, &grads);
      adam.step(model.net.trainable(), grads.trainable());
      model.net.update_running_stats(pass.batch_stats, cfg.bn_momentum);
      result.step_losses.push_back(loss);
      epoch_loss += loss;
    }

    EpochLog entry{epoch, epoch_loss / cfg.steps_per_epoch, 0.0};
    if (!val.empty()) {
      double sum = 0.0;
      for (const auto& s : val) sum += mask_iou(segmentation_infer(model, s.image).binary, s.mask);
      entry.val_iou = sum / static_cast<double>(val.size());
      if (entry.val_iou > best_iou) {
        best_iou = entry.val_iou;
        best = model.net;
      }
    }
    log::debug("seg epoch " + std::to_string(epoch) + " loss " + std::to_string(entry.train_loss) + " val_iou " +
               std::to_string(entry.val_iou));
    result.log.push_back(entry);
    if (cfg.on_epoch) cfg.on_epoch(entry);
  }
  if (!val.empty()) model.net = std::move(best);
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------- keypoints

RealGrid luminance(const Raster& raster) {
  require(!raster.empty(), ErrorKind::Data, "empty raster");
  RealGrid out(raster.width(), raster.height());
  if (raster.channels() == 3) {
    const auto r = raster.band(0), g = raster.band(1), b = raster.band(2);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  } else {
    for (int c = 0; c < raster.channels(); ++c) {
      const auto band = raster.band(c);
      for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += band[i];
    }
    for (double& v : out.data) v /= raster.channels();
  }
  return out;
}

RealGrid corner_response(const RealGrid& img, double sigma) {
  const int w = img.width, h = img.height;
  RealGrid xx(w, h), yy(w, h), xy(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (img.at(std::min(x + 1, w - 1), y) - img.at(std::max(x - 1, 0), y));
      const double gy = 0.5 * (img.at(x, std::min(y + 1, h - 1)) - img.at(x, std::max(y - 1, 0)));
      xx.at(x, y) = gx * gx;
      yy.at(x, y) = gy * gy;
      xy.at(x, y) = gx * gy;
    }
  xx = gaussian_blur(xx, sigma);
  yy = gaussian_blur(yy, sigma);
  xy = gaussian_blur(xy, sigma);
  RealGrid r(w, h);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double a = xx.data[i], c = yy.data[i], b = xy.data[i];
    const double half = 0.5 * (a - c);
    r.data[i] = std::max(0.0, 0.5 * (a + c) - std::sqrt(half * half + b * b));
  }
  return r;
}

namespace {

double sample_bilinear(const RealGrid& g, double x, double y) {
  x = std::clamp(x, 0.0, g.width - 1.0);
  y = std::clamp(y, 0.0, g.height - 1.0);
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, g.width - 1), y1 = std::min(y0 + 1, g.height - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * g.at(x0, y0) + fx * g.at(x1, y0)) + fy * ((1 - fx) * g.at(x0, y1) + fx * g.at(x1, y1));
}

// Responses below this are round-off on flat regions.
constexpr double kMinResponse = 1e-12;

}  // namespace

KeypointSet keypoint_detect(const Raster& raster, int n, const KeypointParams& params) {
  require(n >= 1, ErrorKind::Usage, "requested keypoint count must be at least 1");
  require(params.nms_radius >= 1 && params.octaves >= 1, ErrorKind::Usage, "bad keypoint parameters");
  const RealGrid lum = luminance(raster);
  const int w = lum.width, h = lum.height, r = params.nms_radius;

  // Octave 0 localizes; every octave contributes to the score.
  std::vector<RealGrid> resp{corner_response(lum, params.integration_sigma)};
  for (int o = 1; o < params.octaves; ++o) {
    const int ow = w >> o, oh = h >> o;
    if (ow < 3 || oh < 3) break;
    resp.push_back(corner_response(area_resize(lum, ow, oh), params.integration_sigma));
  }
  const RealGrid& r0 = resp[0];

  std::vector<Keypoint> cand;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = r0.at(x, y);
      if (v <= kMinResponse) continue;
      bool is_max = true;
      for (int dy = -r; dy <= r && is_max; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const double u = r0.at(nx, ny);
          // Plateaus keep only their first pixel in raster order.
          if (u > v || (u == v && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      double score = v;
      for (std::size_t o = 1; o < resp.size(); ++o) {
        const double s = static_cast<double>(1 << o);
        score += sample_bilinear(resp[o], (x + 0.5) / s - 0.5, (y + 0.5) / s - 0.5);
      }
      cand.push_back({static_cast<double>(x), static_cast<double>(y), score});
    }
  std::stable_sort(cand.begin(), cand.end(), [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
  if (cand.size() > static_cast<std::size_t>(n)) cand.resize(static_cast<std::size_t>(n));

  KeypointSet out;
  out.width = w;
  out.height = h;
  out.requested = n;
  out.points = std::move(cand);
  return out;
}

// ---------------------------------------------------------------- partition

Partition unsupervised_segment(const Raster& raster, const PartitionParams& params) {
  require(!raster.empty(), ErrorKind::Data, "empty raster");
  require(params.k >= 0.0 && params.min_size >= 0, ErrorKind::Usage, "bad partition parameters");
  const int w = raster.width(), h = raster.height(), nc = raster.channels();
  struct Edge {
    double wgt;
    std::int32_t a, b;
  };
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(w) * h * 4);
  const auto dist = [&](int x0, int y0, int x1, int y1) {
    double s = 0.0;
    for (int c = 0; c < nc; ++c) {
      const double d = raster.at(c, x0, y0) - raster.at(c, x1, y1);
      s += d * d;
    }
    return std::sqrt(s);
  };
  // Enumerated in (row, col) order; the stable sort keeps that as tie-break.
  static constexpr int kOff[4][2] = {{1, 0}, {-1, 1}, {0, 1}, {1, 1}};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (const auto& o : kOff) {
        const int nx = x + o[0], ny = y + o[1];
        if (nx < 0 || nx >= w || ny >= h) continue;
        edges.push_back({dist(x, y, nx, ny), y * w + x, ny * w + nx});
      }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.wgt < b.wgt; });

  const std::size_t npx = static_cast<std::size_t>(w) * h;
  std::vector<std::int32_t> parent(npx);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::int32_t> size(npx, 1);
  std::vector<double> internal(npx, 0.0);
  const auto find = [&](std::int32_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  };
  const auto unite = [&](std::int32_t a, std::int32_t b, double wgt) {
    if (size[a] < size[b]) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    internal[a] = wgt;
  };
  for (const auto& e : edges) {
    const auto a = find(e.a), b = find(e.b);
    if (a == b) continue;
    const double ta = internal[a] + params.k / size[a];
    const double tb = internal[b] + params.k / size[b];
    if (e.wgt <= std::min(ta, tb)) unite(a, b, e.wgt);
  }
  if (params.min_size > 1)
    for (const auto& e : edges) {
      const auto a = find(e.a), b = find(e.b);
      if (a != b && (size[a] < params.min_size || size[b] < params.min_size)) unite(a, b, std::max(internal[a], internal[b]));
    }
  LabelGrid labels(w, h);
  for (std::size_t i = 0; i < npx; ++i) labels.data[i] = find(static_cast<std::int32_t>(i));
  return compact_labels(labels);
}

// ---------------------------------------------------------------- external adapter

namespace {

std::mutex& descriptor_mutex(const std::string& key) {
  static std::mutex guard;
  static std::map<std::string, std::unique_ptr<std::mutex>> locks;
  std::lock_guard<std::mutex> g(guard);
  auto& slot = locks[key];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

fs::path scratch_dir() {
  static std::atomic<std::uint64_t> counter{0};
  fs::path d = fs::temp_directory_path() /
               ("srtask-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
  fs::create_directories(d);
  return d;
}

std::string substitute(std::string arg, const std::string& key, const std::string& value) {
  for (std::size_t pos; (pos = arg.find(key)) != std::string::npos;) arg.replace(pos, key.size(), value);
  return arg;
}

void run_process(const std::vector<std::string>& argv) {
  require(!argv.empty(), ErrorKind::Usage, "adapter command is empty");
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = ::posix_spawnp(&pid, args[0], nullptr, nullptr, args.data(), environ);
  if (rc != 0) fail(ErrorKind::Io, "cannot invoke adapter '" + argv[0] + "': " + std::strerror(rc));
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) fail(ErrorKind::Io, "waitpid failed for adapter '" + argv[0] + "'");
  }
  if (!WIFEXITED(status)) fail(ErrorKind::Io, "adapter '" + argv[0] + "' terminated abnormally");
  if (WEXITSTATUS(status) != 0)
    fail(ErrorKind::Io, "adapter '" + argv[0] + "' exited with status " + std::to_string(WEXITSTATUS(status)));
}

TaskOutput parse_adapter_output(TaskKind kind, const json& j, int w, int h) {
  const auto bad = [](const std::string& m) { fail(ErrorKind::Contract, "adapter output: " + m); };
  if (!j.is_object()) bad("not a JSON object");
  if (j.value("width", -1) != w || j.value("height", -1) != h) bad("footprint differs from the input raster");
  const std::size_t npx = static_cast<std::size_t>(w) * h;
  switch (kind) {
    case TaskKind::Segmentation: {
      if (!j.contains("prob") || !j["prob"].is_array() || j["prob"].size() != npx) bad("missing or mis-sized 'prob'");
      RealGrid prob(w, h);
      for (std::size_t i = 0; i < npx; ++i) {
        if (!j["prob"][i].is_number()) bad("non-numeric probability");
        const double p = j["prob"][i].get<double>();
        if (!(p >= 0.0 && p <= 1.0)) bad("probability " + std::to_string(p) + " outside [0, 1]");
        prob.data[i] = p;
      }
      return make_seg_mask(std::move(prob), j.value("threshold", 0.5));
    }
    case TaskKind::Keypoints: {
      if (!j.contains("points") || !j["points"].is_array()) bad("missing 'points'");
      KeypointSet k;
      k.width = w;
      k.height = h;
      k.requested = j.value("requested", static_cast<int>(j["points"].size()));
      for (const auto& p : j["points"]) {
        if (!p.is_array() || p.size() != 3) bad("points must be [x, y, score] triples");
        k.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
      }
      std::stable_sort(k.points.begin(), k.points.end(),
                       [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
      TaskOutput out = std::move(k);
      validate_output(out);
      return out;
    }
    case TaskKind::Partition: {
      if (!j.contains("labels") || !j["labels"].is_array() || j["labels"].size() != npx)
        bad("missing or mis-sized 'labels'");
      LabelGrid labels(w, h);
      for (std::size_t i = 0; i < npx; ++i) {
        if (!j["labels"][i].is_number_integer() || j["labels"][i].get<std::int64_t>() < 0) bad("labels must be non-negative integers");
        labels.data[i] = j["labels"][i].get<std::int32_t>();
      }
      return compact_labels(labels);
    }
  }
  fail(ErrorKind::Contract, "adapter output: unknown kind");
}

}  // namespace

TaskOutput external_task_adapter(const fs::path& descriptor, const Raster& raster) {
  const json j = read_json(descriptor);
  try {
    const TaskKind kind = parse_task_kind(j.at("kind").get<std::string>());
    const json invoke = j.value("invoke", json::object());
    const std::string type = invoke.value("type", j.contains("weights_path") ? "weights" : "");
    const json params = invoke.value("params", json::object());

    if (type == "weights") {
      const TaskModel model = model_from_descriptor(j, descriptor.parent_path());
      return segmentation_infer(model, raster);
    }
    if (type == "builtin") {
      const std::string name = invoke.at("name").get<std::string>();
      if (name == "corner_detector") {
        require(kind == TaskKind::Keypoints, ErrorKind::Data, "corner_detector produces keypoints");
        KeypointParams kp;
        kp.nms_radius = params.value("nms_radius", kp.nms_radius);
        kp.octaves = params.value("octaves", kp.octaves);
        kp.integration_sigma = params.value("integration_sigma", kp.integration_sigma);
        return keypoint_detect(raster, params.value("n", 1000), kp);
      }
      if (name == "graph_segmenter") {
        require(kind == TaskKind::Partition, ErrorKind::Data, "graph_segmenter produces partitions");
        PartitionParams pp;
        pp.k = params.value("k", pp.k);
        pp.min_size = params.value("min_size", pp.min_size);
        return unsupervised_segment(raster, pp);
      }
      fail(ErrorKind::Data, "unknown builtin adapter '" + name + "'");
    }
    if (type == "subprocess") {
      const auto command = invoke.at("command").get<std::vector<std::string>>();
      std::lock_guard<std::mutex> lock(descriptor_mutex(fs::absolute(descriptor).lexically_normal().string()));
      const fs::path dir = scratch_dir();
      const fs::path in = dir / "input.raw", out = dir / "output.json";
      struct Cleanup {
        fs::path p;
        ~Cleanup() {
          std::error_code ec;
          fs::remove_all(p, ec);
        }
      } cleanup{dir};
      save_raster(raster, in);
      std::vector<std::string> argv;
      for (const auto& a : command) argv.push_back(substitute(substitute(a, "{input}", in.string()), "{output}", out.string()));
      run_process(argv);
      if (!fs::exists(out)) fail(ErrorKind::Contract, "adapter output: no output file written");
      json result;
      try {
        result = json::parse(io::read_text(out));
      } catch (const json::exception& e) {
        fail(ErrorKind::Contract, std::string("adapter output: malformed JSON: ") + e.what());
      }
      try {
        return parse_adapter_output(kind, result, raster.width(), raster.height());
      } catch (const json::exception& e) {
        fail(ErrorKind::Contract, std::string("adapter output: ") + e.what());
      }
    }
    fail(ErrorKind::Data, "descriptor declares no usable invocation method");
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, std::string("malformed adapter descriptor: ") + e.what());
  }
}

}  // namespace srtask
