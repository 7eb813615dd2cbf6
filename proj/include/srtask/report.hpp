// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srtask/evaluate.hpp"
#include "srtask/image_io.hpp"
#include "srtask/train_sr.hpp"

namespace srtask {

struct TaskEntry {
  std::string id;
  TaskKind kind = TaskKind::Segmentation;
  std::filesystem::path model;  // descriptor; optional for keypoints / partition
  std::vector<std::string> bands;
  int n_keypoints = 1000;
};

struct Thresholds {
  double theta = 0.8;
  double epsilon_px = 3.0;
  std::optional<double> mask;  // overrides the model's own threshold
};

struct RunConfig {
  std::filesystem::path dataset;
  std::vector<TaskEntry> tasks;
  std::vector<AdaptMode> adapt_modes = {AdaptMode::None};
  int scale = 0;  // 0: taken from the data
  Thresholds thresholds;
  LossWeights sr_weights;
  std::uint64_t seed = 1;
  std::string split = "test";  // empty: every scene
  bool reference_metrics = false;
  int threads = 0;
  std::filesystem::path out;  // --out takes precedence; not part of the hash
};

/// Relative paths resolve against base_dir. A missing "dataset" falls back
/// to $SRTASK_DATA_ROOT. Throws Error(Usage) on schema violations.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Throws Error(Usage) when a referenced path does not exist.
void validate_run_config(const RunConfig& config);

/// Canonical JSON of the resolved configuration (sorted keys, no output dir).
std::string run_config_json(const RunConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);
/// 16 hex digits of FNV-1a over run_config_json.
std::string config_hash(const RunConfig& config);

TaskSpec make_task_spec(const TaskEntry& entry, const RunConfig& config);

/// Aggregate metrics file: pass fractions per task and mode.
std::string metrics_json(const std::vector<TaskSuitabilityReport>& reports, const std::string& config_hash,
                         std::uint64_t seed);

struct PanelStyle {
  int margin = 2;
  int label_scale = 2;
  int circle_radius = 3;
  double mask_opacity = 0.5;
};

/// Grid with one column per branch and rows input / task output / overlay.
/// `labels` are burned in above each column.
io::PngImage panel_image(const Scene& scene, std::span<const BranchResult> results,
                         const std::vector<std::string>& labels, const PanelStyle& style = {});
void render_panel(const Scene& scene, std::span<const BranchResult> results, const std::vector<std::string>& labels,
                  const std::filesystem::path& path, const std::map<std::string, std::string>& text = {},
                  const PanelStyle& style = {});

/// Pixels on the outline of a keypoint marker centred at (cx, cy).
bool on_circle(int px, int py, double cx, double cy, int radius);

}  // namespace srtask
