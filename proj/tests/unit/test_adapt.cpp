// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "srtask/adapt.hpp"
#include "srtask/error.hpp"

using namespace srtask;

namespace {

TaskModel model(std::uint64_t seed = 3) {
  TaskModel m;
  m.bands = {"B08"};
  m.training_gsd = 1.0;
  m.net = UNet({2, 4, 1}, seed);
  return m;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

double max_rel(const ActivationStats& a, const ActivationStats& b) {
  double worst = 0;
  for (std::size_t k = 0; k < a.layers.size(); ++k)
    for (int c = 0; c < a.layers[k].channels(); ++c) {
      worst = std::max(worst, rel(a.layers[k].mean(c), b.layers[k].mean(c)));
      worst = std::max(worst, rel(a.layers[k].variance(c), b.layers[k].variance(c)));
    }
  return worst;
}

std::vector<Raster> pool(int n, std::uint64_t seed) {
  std::vector<Raster> out;
  for (int i = 0; i < n; ++i) {
    Raster r = testutil::noise(16, 16, seed + i);
    for (double& v : r.pixels()) v = 0.3 + 0.4 * v;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST_CASE("input statistics of two constant images") {
  const std::vector<Raster> imgs{testutil::constant(8, 8, 0.0), testutil::constant(8, 8, 2.0)};
  const ActivationStats s = compute_activation_stats(model(), imgs);
  CHECK(s.n_images == 2);
  CHECK(s.input.mean(0) == 1.0);
  CHECK(s.input.population_variance(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.input.variance(0) == doctest::Approx(128.0 / 127.0).epsilon(1e-15));
  CHECK(s.layers.size() == 10u);
}

TEST_CASE("activation statistics are order independent and merge consistently") {
  const TaskModel m = model();
  auto imgs = pool(4, 10);
  const ActivationStats a = compute_activation_stats(m, imgs);
  std::vector<Raster> shuffled{imgs[2], imgs[0], imgs[3], imgs[1]};
  const ActivationStats b = compute_activation_stats(m, shuffled);
  CHECK(max_rel(a, b) <= 1e-9);

  const std::vector<Raster> first{imgs[0], imgs[1]}, second{imgs[2], imgs[3]};
  const NormStats input = merged(compute_activation_stats(m, first).input, compute_activation_stats(m, second).input);
  CHECK(rel(input.mean(0), a.input.mean(0)) <= 1e-12);
  CHECK(rel(input.variance(0), a.input.variance(0)) <= 1e-9);

  const std::vector<Raster> one{imgs[0]};
  const ActivationStats s1 = compute_activation_stats(m, one);
  CHECK(max_rel(s1, compute_activation_stats(m, one)) == 0.0);
  CHECK_THROWS_AS(compute_activation_stats(m, {}), Error);
  const std::vector<Raster> wrong{testutil::noise(16, 16, 1, {"B02"})};
  CHECK_THROWS_AS(compute_activation_stats(m, wrong), Error);
}

TEST_CASE("recalibration with the model's own statistics is a fixed point") {
  TaskModel m = model();
  Rng rng(8);
  for (auto* bn : m.net.bn_layers())
    for (int c = 0; c < bn->c; ++c) {
      bn->running_mean.v[c] = 0.1 * rng.normal();
      bn->running_var.v[c] = 0.5 + rng.uniform();
    }
  ActivationStats own;
  for (const auto* bn : m.net.bn_layers()) own.layers.push_back(NormStats::from_moments(bn->running_mean.v, bn->running_var.v, 1000));
  const TaskModel r = recalibrate(m, own);
  const Raster x = testutil::noise(16, 16, 2);
  const auto a = segmentation_infer(m, x).prob, b = segmentation_infer(r, x).prob;
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-5);
}

TEST_CASE("collect, install, collect") {
  const TaskModel m = model(5);
  const auto imgs = pool(3, 40);
  const ActivationStats first = compute_activation_stats(m, imgs);
  const TaskModel r = recalibrate(m, first, "dataset_wise", "pool");
  const ActivationStats again = compute_activation_stats(r, imgs);
  double worst = 0;
  for (std::size_t k = 0; k < first.layers.size(); ++k)
    for (int c = 0; c < first.layers[k].channels(); ++c) {
      const auto* bn = r.net.bn_layers()[k];
      worst = std::max(worst, std::abs(again.layers[k].mean(c) - bn->running_mean.v[c]));
      worst = std::max(worst, rel(again.layers[k].variance(c), bn->running_var.v[c]));
    }
  CHECK(worst <= 1e-4);
  REQUIRE(r.adaptation.has_value());
  CHECK(r.adaptation->mode == "dataset_wise");
  CHECK(r.adaptation->n_images == 3);
}

TEST_CASE("recalibration touches only running statistics") {
  TaskModel m = model(6);
  const TaskModel before = m;
  const ActivationStats s = compute_activation_stats(m, pool(2, 60));
  TaskModel r = recalibrate(m, s);
  auto a = m.net.named_tensors(), b = r.net.named_tensors(), o = const_cast<TaskModel&>(before).net.named_tensors();
  bool stats_changed = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tensor->v == o[i].tensor->v);  // original untouched
    if (a[i].name.find("running_") == std::string::npos) CHECK(a[i].tensor->v == b[i].tensor->v);
    else stats_changed |= a[i].tensor->v != b[i].tensor->v;
  }
  CHECK(stats_changed);

  ActivationStats short_stats = s;
  short_stats.layers.pop_back();
  CHECK_THROWS_AS(recalibrate(m, short_stats), Error);
}

TEST_CASE("adapt_model modes") {
  const TaskModel m = model(7);
  const Raster x = testutil::noise(16, 16, 70);
  const std::vector<Raster> one{x};
  const TaskModel none = adapt_model(m, AdaptMode::None, one);
  CHECK(segmentation_infer(none, x).prob == segmentation_infer(m, x).prob);
  const TaskModel s1 = adapt_model(m, AdaptMode::SampleWise, one);
  const TaskModel s2 = adapt_model(m, AdaptMode::SampleWise, one);
  CHECK(segmentation_infer(s1, x).prob == segmentation_infer(s2, x).prob);
  CHECK(s1.adaptation->mode == "sample_wise");
  const auto two = pool(2, 80);
  CHECK_THROWS_AS(adapt_model(m, AdaptMode::SampleWise, two), Error);
  CHECK_THROWS_AS(adapt_model(m, AdaptMode::DatasetWise, {}), Error);
  CHECK(parse_adapt_mode("dataset_wise") == AdaptMode::DatasetWise);
  CHECK_THROWS_AS(parse_adapt_mode("both"), Error);
}

TEST_CASE("rescale training corpus") {
  SegSample s{testutil::noise(300, 300, 1), Mask(300, 300)};
  for (int y = 100; y < 130; ++y)
    for (int x = 0; x < 300; ++x) s.mask.at(x, y) = 1;
  const std::vector<SegSample> corpus{s};
  const auto out = rescale_training_corpus(corpus, 10.0 / 3.0);
  CHECK(out[0].image.width() == 90);
  CHECK(out[0].mask.width == 90);
  CHECK(out[0].mask.height == 90);
  CHECK(out[0].image.gsd() == doctest::Approx(10.0 / 3.0));
  const auto same = rescale_training_corpus(corpus, 1.0);
  CHECK(same[0].image == s.image);
  CHECK(same[0].mask == s.mask);
  CHECK_THROWS_AS(rescale_training_corpus(corpus, 0.5), Error);
}

TEST_CASE("intensity inversion") {
  SegSample s{testutil::constant(4, 4, 0.2), Mask(4, 4, 1)};
  const SegSample inv = invert_intensity(s, 1.0, 1);
  for (double v : inv.image.pixels()) CHECK(v == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(inv.mask == s.mask);
  CHECK(invert_intensity(s, 0.0, 1).image == s.image);

  int flipped = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) flipped += invert_intensity(s, 0.5, seed).image != s.image;
  CHECK(flipped >= 450);
  CHECK(flipped <= 550);

  // Exact on dyadic values such as 16-bit quantization steps.
  Raster d(64, 64, {"B08"}, 1.0);
  for (int i = 0; i < 64 * 64; ++i) d.pixels()[i] = (i * 16) / 65536.0;
  CHECK(invert_intensity(invert_intensity(d)) == d);
}
