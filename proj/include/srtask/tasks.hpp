// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "srtask/raster.hpp"
#include "srtask/unet.hpp"

namespace srtask {

enum class TaskKind { Segmentation, Keypoints, Partition };

const char* to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& s);

struct SegMask {
  RealGrid prob;  // foreground probability in [0, 1]
  Mask binary;    // prob >= threshold
  double threshold = 0.5;
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct KeypointSet {
  int width = 0;   // image footprint the coordinates refer to
  int height = 0;
  std::vector<Keypoint> points;  // descending score
  int requested = 0;
};

struct Partition {
  LabelGrid labels;  // contiguous from 0
  int count = 0;
};

using TaskOutput = std::variant<SegMask, KeypointSet, Partition>;

TaskKind kind_of(const TaskOutput& out);
int output_width(const TaskOutput& out);
int output_height(const TaskOutput& out);
// Throws Error(Contract) when an output breaks its type invariants.
void validate_output(const TaskOutput& out);

SegMask make_seg_mask(RealGrid prob, double threshold = 0.5);
// Relabels to 0..k-1 in raster order of first appearance.
Partition compact_labels(const LabelGrid& labels);

/// Provenance of a batch-norm recalibration, persisted with the model.
struct AdaptationInfo {
  std::string mode;          // none | sample_wise | dataset_wise
  std::string stats_source;  // free-form description of the image pool
  std::int64_t n_images = 0;
};

/// A trained segmentation network plus the metadata needed to apply it.
struct TaskModel {
  TaskKind kind = TaskKind::Segmentation;
  std::string target = "foreground";
  std::vector<std::string> bands = {"B08"};
  double training_gsd = 0.0;
  double threshold = 0.5;
  UNet net;
  std::optional<AdaptationInfo> adaptation;
};

/// Writes the JSON descriptor at `descriptor` and the weights container
/// next to it (same stem, `.srtw`).
void save_task_model(const TaskModel& model, const std::filesystem::path& descriptor);
TaskModel load_task_model(const std::filesystem::path& descriptor);

/// Selects the model's bands and lays them out as a (1, C, H, W) tensor.
nn::Tensor model_input(const TaskModel& model, const Raster& raster);

// Logs a warning when the raster GSD differs from the training GSD by > 20%.
void check_gsd(const TaskModel& model, const Raster& raster);

SegMask segmentation_infer(const TaskModel& model, const Raster& raster);

struct SegSample {
  Raster image;
  Mask mask;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_iou = 0.0;
};

struct SegTrainConfig {
  UNetConfig arch{4, 32, 1};
  std::vector<std::string> bands = {"B08"};
  std::string target = "foreground";
  int epochs = 10;
  int steps_per_epoch = 50;
  int batch = 4;
  int crop = 64;  // square training crop; shrunk to fit the smallest image
  double lr = 2e-3;
  double bn_momentum = 0.1;
  double p_invert = 0.0;
  std::uint64_t seed = 1;
  std::function<void(const EpochLog&)> on_epoch;
};

struct SegTrainResult {
  TaskModel model;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;
};

/// Minimizes pixelwise binary cross-entropy with Adam. Returns the
/// checkpoint with the best mean validation IoU (the last one when val is
/// empty). Throws Error(Numeric) on a non-finite loss.
SegTrainResult segmentation_train(std::span<const SegSample> train, std::span<const SegSample> val,
                                  const SegTrainConfig& config);

double mask_iou(const Mask& a, const Mask& b);

struct KeypointParams {
  int nms_radius = 2;
  int octaves = 3;
  double integration_sigma = 1.0;
};

/// Multi-scale min-eigenvalue corner detector. Returns min(N, #maxima)
/// points sorted by descending score.
KeypointSet keypoint_detect(const Raster& raster, int n, const KeypointParams& params = {});

/// Per-pixel corner response of the finest octave (exposed for tests).
RealGrid corner_response(const RealGrid& luminance, double integration_sigma);
RealGrid luminance(const Raster& raster);

struct PartitionParams {
  double k = 0.5;
  int min_size = 0;
};

/// Greedy graph-based region merging over the 8-connected pixel graph.
Partition unsupervised_segment(const Raster& raster, const PartitionParams& params = {});

/// Runs an externally described task model: a built-in loopback, a
/// serialized-weights segmentation model, or a subprocess.
TaskOutput external_task_adapter(const std::filesystem::path& descriptor, const Raster& raster);

}  // namespace srtask
