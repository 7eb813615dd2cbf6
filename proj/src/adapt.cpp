// SPDX-License-Identifier: Apache-2.0
#include "srtask/adapt.hpp"

#include "srtask/error.hpp"
#include "srtask/resample.hpp"
#include "srtask/rng.hpp"

namespace srtask {

const char* to_string(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::None: return "none";
    case AdaptMode::SampleWise: return "sample_wise";
    case AdaptMode::DatasetWise: return "dataset_wise";
  }
  return "?";
}

AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "none") return AdaptMode::None;
  if (s == "sample_wise") return AdaptMode::SampleWise;
  if (s == "dataset_wise") return AdaptMode::DatasetWise;
  fail(ErrorKind::Usage, "unknown adaptation mode '" + s + "'");
}

ActivationStats compute_activation_stats(const TaskModel& model, std::span<const Raster> images) {
  require(!images.empty(), ErrorKind::Data, "activation statistics need at least one image");
  const int m = model.net.multiple();
  ActivationStats out;
  out.input = NormStats(static_cast<int>(model.bands.size()));
  out.n_images = static_cast<std::int64_t>(images.size());

  // Same padding as inference so the statistics describe what the net sees.
  std::vector<nn::Tensor> inputs;
  for (const auto& img : images) {
    nn::Tensor x = model_input(model, img);
    require(x.h >= m && x.w >= m, ErrorKind::Data, "image smaller than the network minimum");
    out.input.add_planar(x.v, static_cast<std::int64_t>(x.plane()));
    inputs.push_back(nn::reflect_pad(x, (m - x.h % m) % m, (m - x.w % m) % m));
  }

  UNet work = model.net;
  auto layers = work.bn_layers();
  const std::size_t encoder_layers = 2 * static_cast<std::size_t>(work.config().depth) + 2;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    NormStats acc(layers[k]->c);
    for (const auto& x : inputs) {
      nn::Pass pass{nn::BnMode::Collect, {}};
      work.forward(x, pass, nullptr, k < encoder_layers);
      acc.merge(pass.batch_stats[k]);
    }
    layers[k]->running_mean.v = acc.mean();
    layers[k]->running_var.v = acc.variance();
    out.layers.push_back(std::move(acc));
  }
  return out;
}

TaskModel recalibrate(const TaskModel& model, const ActivationStats& stats, const std::string& mode,
                      const std::string& source) {
  TaskModel out = model;
  auto layers = out.net.bn_layers();
  require(stats.layers.size() == layers.size(), ErrorKind::Data,
          "statistics cover " + std::to_string(stats.layers.size()) + " BN layers, model has " +
              std::to_string(layers.size()));
  for (std::size_t k = 0; k < layers.size(); ++k) {
    require(stats.layers[k].channels() == layers[k]->c, ErrorKind::Data,
            "channel mismatch at BN layer " + std::to_string(k));
    layers[k]->running_mean.v = stats.layers[k].mean();
    layers[k]->running_var.v = stats.layers[k].variance();
  }
  out.adaptation = AdaptationInfo{mode, source, stats.n_images};
  return out;
}

TaskModel adapt_model(const TaskModel& model, AdaptMode mode, std::span<const Raster> images,
                      const std::string& source) {
  switch (mode) {
    case AdaptMode::None: return model;
    case AdaptMode::SampleWise:
      require(images.size() == 1, ErrorKind::Usage, "sample-wise adaptation takes exactly one image");
      break;
    case AdaptMode::DatasetWise:
      require(!images.empty(), ErrorKind::Usage, "dataset-wise adaptation needs a nonempty pool");
      break;
  }
  return recalibrate(model, compute_activation_stats(model, images), to_string(mode), source);
}

std::vector<SegSample> rescale_training_corpus(std::span<const SegSample> corpus, double target_gsd) {
  std::vector<SegSample> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    require(target_gsd >= s.image.gsd() * (1.0 - 1e-9), ErrorKind::Usage,
            "target GSD must not be finer than the corpus GSD");
    SegSample r;
    r.image = downscale_to_gsd(s.image, target_gsd);
    r.mask = resize_mask(s.mask, r.image.width(), r.image.height());
    require(r.mask.same_dims(r.image.width(), r.image.height()), ErrorKind::Data, "rescaled mask misaligned");
    out.push_back(std::move(r));
  }
  return out;
}

Raster invert_intensity(const Raster& raster) {
  Raster out = raster;
  for (double& v : out.pixels()) v = 1.0 - v;
  return out;
}

SegSample invert_intensity(const SegSample& sample, double p, std::uint64_t seed) {
  Rng rng(seed);
  if (!rng.bernoulli(p)) return sample;
  return {invert_intensity(sample.image), sample.mask};
}

}  // namespace srtask
