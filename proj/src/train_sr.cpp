// SPDX-License-Identifier: Apache-2.0
#include "srtask/train_sr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "srtask/error.hpp"
#include "srtask/log.hpp"
#include "srtask/resample.hpp"
#include "srtask/rng.hpp"
#include "srtask/tensor_store.hpp"

namespace srtask {

using json = nlohmann::json;
using nn::Tensor;

// ------------------------------------------------------------------- network

SRModel::SRModel(const SRConfig& config, std::uint64_t seed) : config_(config) {
  require(config.scale >= 2 && config.scale <= 8, ErrorKind::Usage, "SR scale must be in [2, 8]");
  require(config.blocks >= 0 && config.width >= 1, ErrorKind::Usage, "SR blocks must be >= 0 and width >= 1");
  require(!config.bands.empty(), ErrorKind::Usage, "SR model needs at least one band");
  const int c = static_cast<int>(config.bands.size());
  Rng rng(seed);
  head_ = nn::Conv2d(c, config.width, 3, true);
  head_.init_he(rng);
  blocks_.resize(config.blocks);
  for (auto& b : blocks_) {
    b.a = nn::Conv2d(config.width, config.width, 3, true);
    b.b = nn::Conv2d(config.width, config.width, 3, true);
    b.a.init_he(rng);
    b.b.init_he(rng);
    // Small second conv keeps the residual stack close to identity at start.
    for (double& w : b.b.weight.v) w *= 0.1;
  }
  tail_ = nn::Conv2d(config.width, c * config.scale * config.scale, 3, true);  // zero: output == bicubic
}

SRModel SRModel::zeros_like(const SRModel& other) {
  SRModel g = other;
  for (auto& t : g.named_tensors()) t.tensor->zero();
  return g;
}

std::vector<nn::NamedTensor> SRModel::named_tensors() {
  std::vector<nn::NamedTensor> out;
  out.push_back({"head.weight", &head_.weight, true});
  out.push_back({"head.bias", &head_.bias, true});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    out.push_back({p + ".a.weight", &blocks_[i].a.weight, true});
    out.push_back({p + ".a.bias", &blocks_[i].a.bias, true});
    out.push_back({p + ".b.weight", &blocks_[i].b.weight, true});
    out.push_back({p + ".b.bias", &blocks_[i].b.bias, true});
  }
  out.push_back({"tail.weight", &tail_.weight, true});
  out.push_back({"tail.bias", &tail_.bias, true});
  return out;
}

std::vector<Tensor*> SRModel::trainable() {
  std::vector<Tensor*> out;
  for (auto& t : named_tensors()) out.push_back(t.tensor);
  return out;
}

Tensor bicubic_tensor(const Tensor& x, int scale) {
  Tensor out(x.n, x.c, x.h * scale, x.w * scale);
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      Raster r(x.w, x.h, {"b"}, 1.0);
      std::copy(x.image(i) + c * x.plane(), x.image(i) + (c + 1) * x.plane(), r.pixels().begin());
      const Raster up = bicubic_resize(r, x.w * scale, x.h * scale);
      std::copy(up.pixels().begin(), up.pixels().end(), out.image(i) + c * out.plane());
    }
  return out;
}

Tensor SRModel::forward(const Tensor& x, Tape* tape) const {
  require(x.c == static_cast<int>(config_.bands.size()), ErrorKind::Data, "SR input channel mismatch");
  const Tensor h = conv_forward(head_, x);
  Tensor cur = h;
  if (tape) {
    tape->x = x;
    tape->head_out = h;
    tape->block_in.clear();
    tape->block_mid.clear();
  }
  for (const auto& b : blocks_) {
    Tensor mid = nn::relu_forward(conv_forward(b.a, cur));
    Tensor out = conv_forward(b.b, mid);
    nn::add_inplace(out, cur);
    if (tape) {
      tape->block_in.push_back(std::move(cur));
      tape->block_mid.push_back(std::move(mid));
    }
    cur = std::move(out);
  }
  nn::add_inplace(cur, h);  // global skip
  Tensor y = bicubic_tensor(x, config_.scale);
  nn::add_inplace(y, nn::pixel_shuffle(conv_forward(tail_, cur), config_.scale));
  if (tape) {
    tape->tail_in = std::move(cur);
    tape->pre_clamp = y;
  }
  for (double& v : y.v) v = std::clamp(v, 0.0, 1.0);
  return y;
}

void SRModel::backward(const Tape& tape, const Tensor& dy, SRModel& g) const {
  require(dy.same_shape(tape.pre_clamp), ErrorKind::Data, "SR gradient shape mismatch");
  Tensor d = dy;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (tape.pre_clamp.v[i] < 0.0 || tape.pre_clamp.v[i] > 1.0) d.v[i] = 0.0;
  Tensor dcur = conv_backward(tail_, tape.tail_in, nn::pixel_unshuffle(d, config_.scale), &g.tail_);
  Tensor dhead = dcur;
  for (int k = static_cast<int>(blocks_.size()) - 1; k >= 0; --k) {
    const auto& b = blocks_[k];
    Tensor dmid = conv_backward(b.b, tape.block_mid[k], dcur, &g.blocks_[k].b);
    dmid = nn::relu_backward(tape.block_mid[k], dmid);
    nn::add_inplace(dcur, conv_backward(b.a, tape.block_in[k], dmid, &g.blocks_[k].a));
  }
  nn::add_inplace(dhead, dcur);
  conv_backward(head_, tape.x, dhead, &g.head_, false);
}

void save_sr_model(SRModel& model, const std::filesystem::path& path, const std::map<std::string, std::string>& run) {
  const auto& c = model.config();
  json meta{{"kind", "sr"}, {"scale", c.scale}, {"blocks", c.blocks}, {"width", c.width}, {"bands", c.bands}};
  if (!run.empty()) meta["run"] = run;
  save_archive(collect_tensors(model.named_tensors(), meta.dump()), path);
}

SRModel load_sr_model(const std::filesystem::path& path) {
  const TensorArchive a = load_archive(path);
  SRConfig c;
  try {
    const json meta = json::parse(a.metadata);
    require(meta.value("kind", "") == "sr", ErrorKind::Data, path.string() + " is not an SR model");
    c.scale = meta.at("scale").get<int>();
    c.blocks = meta.at("blocks").get<int>();
    c.width = meta.at("width").get<int>();
    c.bands = meta.at("bands").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, "bad SR model metadata in " + path.string() + ": " + e.what());
  }
  SRModel m(c, 0);
  assign_tensors(a, m.named_tensors());
  return m;
}

Tensor raster_tensor(const Raster& raster, std::span<const std::string> bands) {
  for (const auto& b : bands) require(raster.band_index(b) >= 0, ErrorKind::Data, "raster lacks band " + b);
  const Raster sel = raster.select(bands);
  Tensor t(1, sel.channels(), sel.height(), sel.width());
  std::copy(sel.pixels().begin(), sel.pixels().end(), t.v.begin());
  return t;
}

Raster tensor_raster(const Tensor& t, int index, const std::vector<std::string>& bands, double gsd) {
  require(static_cast<int>(bands.size()) == t.c, ErrorKind::Data, "band list does not match tensor channels");
  Raster r(t.w, t.h, bands, gsd);
  std::copy(t.image(index), t.image(index) + t.image_size(), r.pixels().begin());
  return r;
}

Raster sr_infer(const SRModel& model, const Raster& lr) {
  const auto& bands = model.config().bands;
  const Tensor y = model.forward(raster_tensor(lr, bands), nullptr);
  return tensor_raster(y, 0, bands, lr.gsd() / model.config().scale);
}

// ---------------------------------------------------------------------- loss

const char* to_string(TaskSpace s) { return s == TaskSpace::Output ? "output" : "feature"; }

TaskSpace parse_task_space(const std::string& s) {
  if (s == "output") return TaskSpace::Output;
  if (s == "feature") return TaskSpace::Feature;
  fail(ErrorKind::Usage, "task space must be output or feature, got '" + s + "'");
}

void validate_weights(const LossWeights& w) {
  require(std::isfinite(w.alpha) && std::isfinite(w.beta) && std::isfinite(w.gamma), ErrorKind::Usage,
          "loss weights must be finite");
  require(w.alpha >= 0 && w.beta >= 0 && w.gamma >= 0, ErrorKind::Usage, "loss weights must be non-negative");
  require(w.alpha + w.beta + w.gamma > 0, ErrorKind::Usage, "at least one loss weight must be positive");
}

namespace {

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.v) require(std::isfinite(v), ErrorKind::Data, std::string(what) + " contains non-finite values");
}

// Channels of `t` holding the task model's bands, padded for the network.
Tensor task_view(const Tensor& t, const std::vector<int>& idx, int multiple) {
  Tensor s(t.n, static_cast<int>(idx.size()), t.h, t.w);
  for (int i = 0; i < t.n; ++i)
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy(t.image(i) + idx[k] * t.plane(), t.image(i) + (idx[k] + 1) * t.plane(),
                s.image(i) + k * s.plane());
  return nn::reflect_pad(s, (multiple - t.h % multiple) % multiple, (multiple - t.w % multiple) % multiple);
}

void scatter_task_grad(const Tensor& dview, const std::vector<int>& idx, Tensor& dsr) {
  const Tensor d = nn::reflect_pad_backward(dview, dsr.h, dsr.w);
  for (int i = 0; i < dsr.n; ++i)
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double* src = d.image(i) + k * d.plane();
      double* dst = dsr.image(i) + idx[k] * dsr.plane();
      for (std::size_t p = 0; p < dsr.plane(); ++p) dst[p] += src[p];
    }
}

double sign(double v) { return v > 0 ? 1.0 : v < 0 ? -1.0 : 0.0; }

}  // namespace

LossTerms composite_loss(const Tensor& sr, const Tensor& hr, const Tensor& lr, const std::vector<std::string>& bands,
                         const TaskModel* task, const LossWeights& w, Tensor* dsr) {
  validate_weights(w);
  require(sr.same_shape(hr), ErrorKind::Data, "SR and HR shapes differ");
  require(lr.n == sr.n && lr.c == sr.c && lr.h > 0 && lr.w > 0 && sr.h % lr.h == 0 && sr.w % lr.w == 0 &&
              sr.h / lr.h == sr.w / lr.w,
          ErrorKind::Data, "LR shape is not an integer downscale of the SR shape");
  require(static_cast<int>(bands.size()) == sr.c, ErrorKind::Data, "band list does not match tensor channels");
  require_finite(sr, "SR");
  require_finite(hr, "HR");
  require_finite(lr, "LR");
  const int s = sr.h / lr.h;

  LossTerms t;
  if (dsr) *dsr = Tensor::zeros_like(sr);
  const double n_img = static_cast<double>(sr.size());

  if (w.alpha > 0) {
    for (std::size_t i = 0; i < sr.size(); ++i) {
      const double d = sr.v[i] - hr.v[i];
      t.l_img += w.image_norm == ImageNorm::L1 ? std::abs(d) : d * d;
      if (dsr) dsr->v[i] += w.alpha * (w.image_norm == ImageNorm::L1 ? sign(d) : 2.0 * d) / n_img;
    }
    t.l_img /= n_img;
  }

  if (w.gamma > 0) {
    const double inv = 1.0 / (s * s);
    const double n_lr = static_cast<double>(lr.size());
    for (int i = 0; i < sr.n; ++i)
      for (int c = 0; c < sr.c; ++c)
        for (int y = 0; y < lr.h; ++y)
          for (int x = 0; x < lr.w; ++x) {
            double m = 0;
            for (int dy = 0; dy < s; ++dy)
              for (int dx = 0; dx < s; ++dx) m += sr.at(i, c, y * s + dy, x * s + dx);
            const double d = m * inv - lr.at(i, c, y, x);
            t.l_cons += std::abs(d);
            if (dsr) {
              const double g = w.gamma * sign(d) * inv / n_lr;
              for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx) dsr->at(i, c, y * s + dy, x * s + dx) += g;
            }
          }
    t.l_cons /= n_lr;
  }

  if (w.beta > 0) {
    require(task != nullptr, ErrorKind::Usage, "task loss requested without a task model");
    std::vector<int> idx;
    for (const auto& b : task->bands) {
      const auto it = std::find(bands.begin(), bands.end(), b);
      require(it != bands.end(), ErrorKind::Data, "SR output lacks task band " + b);
      idx.push_back(static_cast<int>(it - bands.begin()));
    }
    const UNet& net = task->net;
    const int m = net.multiple();
    const Tensor xs = task_view(sr, idx, m), xh = task_view(hr, idx, m);
    const bool feature = w.task_space == TaskSpace::Feature;
    nn::Pass ps{nn::BnMode::Eval, {}}, ph{nn::BnMode::Eval, {}};
    UNet::Tape tape;
    const Tensor zs = net.forward(xs, ps, dsr ? &tape : nullptr, feature);
    const Tensor zh = net.forward(xh, ph, nullptr, feature);
    Tensor dz = Tensor::zeros_like(zs);
    if (feature) {
      const double n = static_cast<double>(zs.size());
      for (std::size_t i = 0; i < zs.size(); ++i) {
        const double d = zs.v[i] - zh.v[i];
        t.l_task += d * d / n;
        dz.v[i] = w.beta * 2.0 * d / n;
      }
    } else {
      // BCE against the thresholded HR prediction, over the unpadded area.
      const double n = static_cast<double>(sr.n) * sr.h * sr.w;
      for (int i = 0; i < zs.n; ++i)
        for (int y = 0; y < sr.h; ++y)
          for (int x = 0; x < sr.w; ++x) {
            const double z = zs.at(i, 0, y, x);
            const double target = nn::sigmoid(zh.at(i, 0, y, x)) >= task->threshold ? 1.0 : 0.0;
            t.l_task += (nn::softplus(z) - target * z) / n;
            dz.at(i, 0, y, x) = w.beta * (nn::sigmoid(z) - target) / n;
          }
    }
    if (dsr) {
      const Tensor dx = feature ? net.backward(tape, nullptr, &dz, nullptr) : net.backward(tape, &dz, nullptr, nullptr);
      scatter_task_grad(dx, idx, *dsr);
    }
  }

  t.total = w.alpha * t.l_img + w.beta * t.l_task + w.gamma * t.l_cons;
  return t;
}

LossTerms composite_loss(const Raster& sr, const Raster& hr, const Raster& lr, const TaskModel* task,
                         const LossWeights& w, Raster* grad) {
  require(sr.bands() == hr.bands() && sr.bands() == lr.bands(), ErrorKind::Data, "SR, HR and LR bands differ");
  const Tensor tsr = raster_tensor(sr, sr.bands()), thr = raster_tensor(hr, hr.bands()),
               tlr = raster_tensor(lr, lr.bands());
  Tensor d;
  const LossTerms t = composite_loss(tsr, thr, tlr, sr.bands(), task, w, grad ? &d : nullptr);
  if (grad) *grad = tensor_raster(d, 0, sr.bands(), sr.gsd());
  return t;
}

// ------------------------------------------------------------------ training

namespace {

void check_pair(const SRPair& p, const SRConfig& c, const char* split) {
  const int s = c.scale;
  require(p.hr.width() == p.lr.width() * s && p.hr.height() == p.lr.height() * s, ErrorKind::Data,
          std::string(split) + " pair dims do not match the SR scale");
  for (const auto& b : c.bands)
    require(p.lr.band_index(b) >= 0 && p.hr.band_index(b) >= 0, ErrorKind::Data,
            std::string(split) + " pair lacks band " + b);
}

double val_iou(const SRModel& model, std::span<const SRPair> val, const TaskModel& task) {
  double sum = 0;
  for (const auto& p : val) {
    Raster sr = sr_infer(model, p.lr);
    sr.set_gsd(p.hr.gsd());
    sum += mask_iou(segmentation_infer(task, sr).binary, segmentation_infer(task, p.hr).binary);
  }
  return sum / static_cast<double>(val.size());
}

}  // namespace

SRTrainResult train_task_driven(const SRModel& init, std::span<const SRPair> train, std::span<const SRPair> val,
                                const TaskModel& task, const LossWeights& weights, const SRTrainConfig& cfg,
                                const SREpochCallback& on_epoch) {
  require(!train.empty(), ErrorKind::Data, "SR training corpus is empty");
  require(cfg.epochs >= 1 && cfg.steps_per_epoch >= 1 && cfg.batch >= 1 && cfg.lr_crop >= 1, ErrorKind::Usage,
          "epochs, steps, batch and crop must be positive");
  validate_weights(weights);
  const SRConfig& c = init.config();
  const int s = c.scale;
  int crop = cfg.lr_crop;
  for (const auto& p : train) {
    check_pair(p, c, "train");
    crop = std::min({crop, p.lr.width(), p.lr.height()});
  }
  for (const auto& p : val) check_pair(p, c, "val");
  for (const auto& b : task.bands)
    require(std::find(c.bands.begin(), c.bands.end(), b) != c.bands.end(), ErrorKind::Usage,
            "task band " + b + " is not produced by the SR model");

  std::vector<Tensor> lr_t, hr_t;
  for (const auto& p : train) {
    lr_t.push_back(raster_tensor(p.lr, c.bands));
    hr_t.push_back(raster_tensor(p.hr, c.bands));
  }

  SRTrainResult result;
  SRModel model = init;
  SRModel best = init;
  double best_iou = -1.0;
  nn::Adam adam(cfg.learning_rate);
  Rng rng(cfg.seed);
  const int ch = static_cast<int>(c.bands.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    SREpochLog entry;
    entry.epoch = epoch;
    for (int step = 1; step <= cfg.steps_per_epoch; ++step) {
      Tensor xb(cfg.batch, ch, crop, crop), hb(cfg.batch, ch, crop * s, crop * s);
      for (int b = 0; b < cfg.batch; ++b) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(train.size()) - 1));
        const Tensor& l = lr_t[k];
        const Tensor& h = hr_t[k];
        const int x0 = rng.uniform_int(0, l.w - crop), y0 = rng.uniform_int(0, l.h - crop);
        for (int cc = 0; cc < ch; ++cc) {
          for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x) xb.at(b, cc, y, x) = l.at(0, cc, y0 + y, x0 + x);
          for (int y = 0; y < crop * s; ++y)
            for (int x = 0; x < crop * s; ++x) hb.at(b, cc, y, x) = h.at(0, cc, y0 * s + y, x0 * s + x);
        }
      }
      SRModel::Tape tape;
      const Tensor y = model.forward(xb, &tape);
      // Clamping hides overflow, so test the raw output.
      bool finite = true;
      for (double v : tape.pre_clamp.v) finite &= std::isfinite(v);
      LossTerms t;
      Tensor dy;
      if (finite) {
        t = composite_loss(y, hb, xb, c.bands, &task, weights, &dy);
        finite = std::isfinite(t.total);
      }
      if (!finite) {
        std::ostringstream os;
        os << "SR training diverged at epoch " << epoch << " step " << step << " (lr " << cfg.learning_rate
           << "); returning the last finite state";
        log::error(os.str());
        result.diverged = true;
        result.message = os.str();
        result.model = std::move(model);
        return result;
      }
      SRModel grads = SRModel::zeros_like(model);
      model.backward(tape, dy, grads);
      const SRModel before = model;
      adam.step(model.trainable(), grads.trainable());
      bool params_finite = true;
      for (auto* p : model.trainable())
        for (double v : p->v) params_finite &= std::isfinite(v);
      if (!params_finite) {
        result.diverged = true;
        result.message = "SR training produced non-finite weights at epoch " + std::to_string(epoch) + " step " +
                         std::to_string(step) + "; returning the last finite state";
        log::error(result.message);
        result.model = before;
        return result;
      }
      result.step_losses.push_back(t.total);
      entry.mean.l_img += t.l_img / cfg.steps_per_epoch;
      entry.mean.l_task += t.l_task / cfg.steps_per_epoch;
      entry.mean.l_cons += t.l_cons / cfg.steps_per_epoch;
      entry.mean.total += t.total / cfg.steps_per_epoch;
    }
    if (!val.empty()) {
      entry.val_iou = val_iou(model, val, task);
      if (entry.val_iou > best_iou) {
        best_iou = entry.val_iou;
        best = model;
      }
    }
    log::debug("sr epoch " + std::to_string(epoch) + " total " + std::to_string(entry.mean.total) + " val_iou " +
               std::to_string(entry.val_iou));
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.model = val.empty() ? std::move(model) : std::move(best);
  return result;
}

std::string sr_log_csv(const std::vector<SREpochLog>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,l_img,l_task,l_cons,total,val_iou\n";
  for (const auto& e : log)
    os << e.epoch << ',' << e.mean.l_img << ',' << e.mean.l_task << ',' << e.mean.l_cons << ',' << e.mean.total << ','
       << e.val_iou << '\n';
  return os.str();
}

}  // namespace srtask
