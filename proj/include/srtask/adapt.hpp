// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "srtask/norm_stats.hpp"
#include "srtask/tasks.hpp"

namespace srtask {

enum class AdaptMode { None, SampleWise, DatasetWise };

const char* to_string(AdaptMode mode);
AdaptMode parse_adapt_mode(const std::string& s);

struct ActivationStats {
  NormStats input;                // statistics of the network input itself
  std::vector<NormStats> layers;  // one per BN layer, in UNet::bn_layers() order
  std::int64_t n_images = 0;
};

/// Pre-normalization statistics at every BN layer over the image pool.
/// Layer k is measured with layers 0..k-1 already normalized by the pool's
/// own statistics, which makes collect-install-collect a fixed point.
ActivationStats compute_activation_stats(const TaskModel& model, std::span<const Raster> images);

/// Returns a copy whose BN running statistics are replaced by `stats`.
TaskModel recalibrate(const TaskModel& model, const ActivationStats& stats, const std::string& mode = "dataset_wise",
                      const std::string& source = "");

/// sample_wise expects exactly one image; dataset_wise the whole pool.
TaskModel adapt_model(const TaskModel& model, AdaptMode mode, std::span<const Raster> images,
                      const std::string& source = "");

/// Images through downscale_to_gsd, masks through resize_mask to the same dims.
std::vector<SegSample> rescale_training_corpus(std::span<const SegSample> corpus, double target_gsd);

/// v -> 1 - v on every band.
Raster invert_intensity(const Raster& raster);
/// Inverts the image with probability p; the mask is untouched.
SegSample invert_intensity(const SegSample& sample, double p, std::uint64_t seed);

}  // namespace srtask
