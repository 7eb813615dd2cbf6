// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command layer behind the CLI. Every artifact written under `out` carries
// the run's config hash and seed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "srtask/report.hpp"
#include "srtask/synth.hpp"

namespace srtask::pipeline {

struct Context {
  std::filesystem::path out;
  std::filesystem::path config;  // optional for some commands
  std::optional<std::uint64_t> seed;
};

struct SynthArgs {
  std::filesystem::path spec;  // JSON; empty for defaults
  int n_scenes = 50;
  Domain domain = Domain::A;
};
DatasetManifest synth(const Context& ctx, const SynthArgs& args);

struct TrainTaskArgs {
  std::filesystem::path dataset;  // falls back to the config, then $SRTASK_DATA_ROOT
  std::string target = "roads";
  std::vector<std::string> bands = {"B08"};
  int depth = 3;
  int width = 8;
  int epochs = 10;
  int steps = 50;
  int batch = 4;
  int crop = 64;
  double lr = 2e-3;
  double p_invert = 0.0;
  double train_gsd = 0.0;  // > 0: rescale the corpus to this GSD first
  std::string name = "task_model";
};
struct TrainTaskResult {
  std::filesystem::path descriptor;
  std::vector<EpochLog> log;
};
TrainTaskResult train_task(const Context& ctx, const TrainTaskArgs& args);

struct AdaptArgs {
  std::filesystem::path model;
  AdaptMode mode = AdaptMode::DatasetWise;
  std::filesystem::path dataset;
  std::string split = "test";
  Branch branch = Branch::HR;
  std::string scene;  // required for sample_wise
  std::string name = "model_adapted";
};
std::filesystem::path adapt(const Context& ctx, const AdaptArgs& args);

struct EvalResult {
  std::vector<SceneVerdict> verdicts;
  std::vector<TaskSuitabilityReport> reports;
  std::string config_hash;
  std::uint64_t seed = 0;
};
/// Writes verdicts.jsonl (fresh), suitability.json and metrics.json.
EvalResult eval(const Context& ctx);

struct VerdictArgs {
  std::string scene;
  std::string task;
  std::string mode;  // empty: every evaluated mode
  std::string verdict;
  std::string annotator = "anonymous";
  std::string timestamp;  // empty: now, UTC
};
std::vector<SceneVerdict> verdict(const Context& ctx, const VerdictArgs& args);

struct TrainSrArgs {
  std::string task;  // task id in the config; empty: first segmentation task
  int blocks = 8;
  int width = 32;
  int epochs = 10;
  int steps = 50;
  int batch = 4;
  int crop = 16;
  double lr = 1e-3;
  std::string name = "sr_model";
};
struct TrainSrResult {
  std::filesystem::path weights;
  SRTrainResult training;
};
/// Throws Error(Numeric) after saving the last finite state when training diverges.
TrainSrResult train_sr(const Context& ctx, const TrainSrArgs& args);

struct ReportArgs {
  int panels = 3;  // scenes per task; needs the config
};
/// Re-aggregates verdicts.jsonl (including human verdicts) into metrics.json
/// and suitability.json, and renders panels when a config is available.
std::vector<TaskSuitabilityReport> report(const Context& ctx, const ReportArgs& args);

/// JSON front door used by the C API: {"out", "config", "seed", ...args}.
/// Returns a JSON summary of the result.
std::string run_command(const std::string& name, const std::string& request_json);

std::string utc_timestamp();

}  // namespace srtask::pipeline
