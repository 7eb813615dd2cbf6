// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "srtask/adapt.hpp"
#include "srtask/scene_store.hpp"
#include "srtask/tasks.hpp"

namespace srtask {

enum class Branch { LR, Bicubic, HR };
const char* to_string(Branch b);

/// What to run on each branch input.
struct TaskSpec {
  std::string id;  // stable name used in verdicts and reports
  TaskKind kind = TaskKind::Segmentation;
  std::optional<TaskModel> model;             // segmentation
  std::filesystem::path external;             // adapter descriptor, overrides built-ins
  std::vector<std::string> bands;             // keypoints / partition; empty = all
  int n_keypoints = 1000;
  KeypointParams keypoint_params;
  PartitionParams partition_params;
};

/// Runs the task once on `raster`. `model_override` replaces the segmentation
/// model (used for pre-adapted dataset-wise models).
TaskOutput run_task(const TaskSpec& task, const Raster& raster, AdaptMode mode = AdaptMode::None,
                    const TaskModel* model_override = nullptr);

struct BranchResult {
  Branch branch = Branch::HR;
  TaskOutput output;
  TaskOutput on_hr_grid;  // footprint equals the HR dims
};

/// Per-branch segmentation models recalibrated once over a dataset.
struct DatasetModels {
  TaskModel lr, bicubic, hr;
};

/// Recalibrates one copy of the model per branch over that branch's inputs.
DatasetModels make_dataset_models(const TaskModel& model, std::span<const Scene> scenes, const std::string& source);

/// Inputs of the three branches: native LR, bicubic(LR) at HR dims, HR.
std::array<Raster, 3> branch_inputs(const Scene& scene);

/// Lifts an output computed on the LR grid to the HR grid (nearest for
/// rasters, pixel-centre scaling for keypoints).
TaskOutput lift_output(const TaskOutput& out, int scale);

/// Results in order LR, BICUBIC, HR.
std::array<BranchResult, 3> run_three_branch(const Scene& scene, const TaskSpec& task, AdaptMode mode,
                                             const DatasetModels* dataset_models = nullptr);

struct AgreementScore {
  double primary = 0.0;
  std::map<std::string, double> components;
  std::vector<std::string> flags;
};

AgreementScore agreement_mask(const SegMask& candidate, const SegMask& target, double boundary_tolerance = 2.0);
AgreementScore agreement_keypoints(const KeypointSet& candidate, const KeypointSet& target, double epsilon_px = 3.0,
                                   int density_cells = 16);
AgreementScore agreement_partition(const Partition& candidate, const Partition& target);
AgreementScore agreement(const TaskOutput& candidate, const TaskOutput& target, double epsilon_px = 3.0);

double adjusted_rand_index(const LabelGrid& a, const LabelGrid& b);
double boundary_f1(const Mask& candidate, const Mask& target, double tolerance);
double jensen_shannon(const std::vector<double>& p, const std::vector<double>& q);

/// Image-fidelity numbers reported next to task scores for reference only.
double psnr(const Raster& a, const Raster& b);
double ssim(const Raster& a, const Raster& b);

enum class HumanJudgement { Better, Worse, Unclear };
const char* to_string(HumanJudgement j);
HumanJudgement parse_human_judgement(const std::string& s);

struct HumanVerdict {
  HumanJudgement verdict = HumanJudgement::Unclear;
  std::string annotator;
  std::string timestamp;
};

struct SceneVerdict {
  std::string scene_id;
  std::string task;
  std::string mode;
  AgreementScore score_lr;
  AgreementScore score_bicubic;
  bool auto_pass = false;
  std::string error;  // non-empty when a branch failed; excluded from aggregates
  std::optional<std::map<std::string, double>> reference_only;  // psnr / ssim of bicubic vs HR
  std::vector<HumanVerdict> human;
  std::string config_hash;  // run provenance, serialized when set
  std::uint64_t seed = 0;
};

std::string verdict_to_json(const SceneVerdict& v);
SceneVerdict verdict_from_json(const std::string& line);

struct EvalOptions {
  double epsilon_px = 3.0;
  bool reference_metrics = false;
  int threads = 0;  // 0 = hardware concurrency
};

SceneVerdict evaluate_scene(const Scene& scene, const TaskSpec& task, AdaptMode mode, const EvalOptions& options = {},
                            const DatasetModels* dataset_models = nullptr);

/// Three-branch evaluation of every listed scene under every mode. Output
/// order is (mode, scene) regardless of thread scheduling.
std::vector<SceneVerdict> evaluate_corpus(const std::filesystem::path& root, const std::vector<std::string>& ids,
                                          const TaskSpec& task, const std::vector<AdaptMode>& modes,
                                          const EvalOptions& options = {});

/// Append-only newline-delimited JSON store. Human verdicts are appended as
/// extra records and merged on load.
class VerdictStore {
 public:
  explicit VerdictStore(std::filesystem::path path);
  const std::filesystem::path& path() const { return path_; }
  void append(const SceneVerdict& v);
  void append(const std::vector<SceneVerdict>& vs);
  std::vector<SceneVerdict> load() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

/// Attaches a human verdict to every stored (scene, task[, mode]) record.
/// Throws Error(Data) when nothing matches. Returns the updated records.
std::vector<SceneVerdict> record_human_verdict(VerdictStore& store, const std::string& scene_id,
                                               const std::string& task, const HumanVerdict& verdict,
                                               const std::string& mode = "");

enum class Suitability { Suitable, Ambiguous, Unsuitable };
const char* to_string(Suitability s);
Suitability classify(double pass_fraction, double theta);

struct ModeSummary {
  int n_scenes = 0;
  int n_pass = 0;
  double pass_fraction = 0.0;
  double mean_score_lr = 0.0;
  double mean_score_bicubic = 0.0;
  Suitability label = Suitability::Unsuitable;
};

struct TaskSuitabilityReport {
  std::string task;
  double theta = 0.8;
  int n_skipped = 0;
  std::string best_mode;
  double pass_fraction = 0.0;  // of the best mode
  Suitability label = Suitability::Unsuitable;
  std::map<std::string, ModeSummary> modes;
  std::optional<double> human_agreement;
  int n_human = 0;
};

/// Throws Error(Data) when no verdict for `task` is present.
TaskSuitabilityReport aggregate_suitability(const std::vector<SceneVerdict>& verdicts, const std::string& task,
                                            double theta = 0.8);
std::string report_to_json(const TaskSuitabilityReport& r);

}  // namespace srtask
