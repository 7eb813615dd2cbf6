// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "srtask/nn.hpp"
#include "srtask/raster.hpp"
#include "srtask/tasks.hpp"

namespace srtask {

struct SRConfig {
  int scale = 3;
  int blocks = 8;
  int width = 32;
  std::vector<std::string> bands = {"B08"};

  friend bool operator==(const SRConfig&, const SRConfig&) = default;
};

/// Residual single-image SR network. The convolutional body predicts a
/// residual on the LR grid that is pixel-shuffled onto the bicubic
/// upsampling; the last layer starts at zero so an untrained model
/// reproduces bicubic exactly. Output is clamped to [0, 1].
class SRModel {
 public:
  struct Block {
    nn::Conv2d a, b;
  };
  struct Tape {
    nn::Tensor x, head_out;
    std::vector<nn::Tensor> block_in, block_mid;
    nn::Tensor tail_in, pre_clamp;
  };

  SRModel() = default;
  SRModel(const SRConfig& config, std::uint64_t seed);
  static SRModel zeros_like(const SRModel& other);

  const SRConfig& config() const { return config_; }
  std::vector<nn::NamedTensor> named_tensors();
  std::vector<nn::Tensor*> trainable();

  /// x is (N, C, h, w) on [0, 1]; returns (N, C, h*S, w*S).
  nn::Tensor forward(const nn::Tensor& x, Tape* tape) const;
  /// Accumulates parameter gradients for dL/d(output) into grads.
  void backward(const Tape& tape, const nn::Tensor& dy, SRModel& grads) const;

 private:
  SRConfig config_;
  nn::Conv2d head_;
  std::vector<Block> blocks_;
  nn::Conv2d tail_;
};

/// `run` is stored verbatim in the metadata (provenance of the training run).
void save_sr_model(SRModel& model, const std::filesystem::path& path,
                   const std::map<std::string, std::string>& run = {});
SRModel load_sr_model(const std::filesystem::path& path);

/// Bicubic upsampling of every image in a batch (no gradient).
nn::Tensor bicubic_tensor(const nn::Tensor& x, int scale);
nn::Tensor raster_tensor(const Raster& raster, std::span<const std::string> bands);
Raster tensor_raster(const nn::Tensor& t, int index, const std::vector<std::string>& bands, double gsd);

Raster sr_infer(const SRModel& model, const Raster& lr);

enum class ImageNorm { L1, L2 };
enum class TaskSpace { Output, Feature };
const char* to_string(TaskSpace s);
TaskSpace parse_task_space(const std::string& s);

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.1;
  ImageNorm image_norm = ImageNorm::L1;
  TaskSpace task_space = TaskSpace::Output;
};

// Throws Error(Usage) on negative weights or an all-zero combination.
void validate_weights(const LossWeights& w);

struct LossTerms {
  double l_img = 0.0;
  double l_task = 0.0;
  double l_cons = 0.0;
  double total = 0.0;
};

/// Batched form. sr and hr are (N, C, H, W) over `bands`, lr is
/// (N, C, H/S, W/S). The task model is only read. dsr receives dL/dsr
/// when non-null.
LossTerms composite_loss(const nn::Tensor& sr, const nn::Tensor& hr, const nn::Tensor& lr,
                         const std::vector<std::string>& bands, const TaskModel* task, const LossWeights& w,
                         nn::Tensor* dsr = nullptr);

/// Raster form; grad (same layout as sr) receives dL/dsr when non-null.
LossTerms composite_loss(const Raster& sr, const Raster& hr, const Raster& lr, const TaskModel* task,
                         const LossWeights& w, Raster* grad = nullptr);

struct SRPair {
  Raster lr;
  Raster hr;
};

struct SRTrainConfig {
  int epochs = 10;
  int steps_per_epoch = 50;
  int batch = 4;
  int lr_crop = 16;  // LR pixels; HR crops are lr_crop * S
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct SREpochLog {
  int epoch = 0;
  LossTerms mean;  // over the epoch's steps
  double val_iou = 0.0;
};

struct SRTrainResult {
  SRModel model;  // best validation checkpoint, or the last finite state
  std::vector<SREpochLog> log;
  std::vector<double> step_losses;
  bool diverged = false;
  std::string message;
};

using SREpochCallback = std::function<void(const SREpochLog&)>;

/// Adam on composite_loss over random aligned crops. Validation IoU compares
/// the task on SR outputs with the task on the HR references.
SRTrainResult train_task_driven(const SRModel& init, std::span<const SRPair> train, std::span<const SRPair> val,
                                const TaskModel& task, const LossWeights& weights, const SRTrainConfig& config,
                                const SREpochCallback& on_epoch = {});

std::string sr_log_csv(const std::vector<SREpochLog>& log);

}  // namespace srtask
