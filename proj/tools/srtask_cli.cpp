// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through the C interface.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "srtask/srtask.h"

namespace {

using json = nlohmann::json;

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

// Adds `value` under `key` only when the option was given on the command line.
template <class T>
void put(json& req, const CLI::App* sub, const char* flag, const char* key, const T& value) {
  if (sub->count(flag) > 0) req[key] = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-based evaluation of super-resolved satellite imagery", "srtask"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(srtask_version()));

  std::string out, config;
  std::optional<std::uint64_t> seed;
  bool json_logs = false;
  int log_level = 1;
  app.add_option("--out", out, "Output directory");
  app.add_option("--config", config, "Run configuration (JSON)");
  app.add_option("--seed", seed, "Seed; overrides the config");
  app.add_flag("--json-logs", json_logs, "Machine-readable progress on stderr");
  app.add_option("--log-level", log_level, "0 debug, 1 info, 2 warn, 3 error")->check(CLI::Range(0, 3));

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::string spec, domain = "A";
  int n_scenes = 50;
  synth->add_option("--spec", spec, "Generator parameters (JSON)")->check(CLI::ExistingFile);
  synth->add_option("-n,--scenes", n_scenes, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--domain", domain, "Radiometric domain")->check(CLI::IsMember({"A", "B"}));

  // train-task
  auto* train_task = app.add_subcommand("train-task", "Train a segmentation task network");
  std::string dataset, target, name;
  std::vector<std::string> bands;
  int depth = 0, width = 0, epochs = 0, steps = 0, batch = 0, crop = 0, blocks = 0;
  double lr = 0, p_invert = 0, train_gsd = 0;
  train_task->add_option("--dataset", dataset, "Dataset root");
  train_task->add_option("--target", target, "Mask name under masks/");
  train_task->add_option("--bands", bands, "Input bands")->delimiter(',');
  train_task->add_option("--depth", depth, "U-Net poolings")->check(CLI::PositiveNumber);
  train_task->add_option("--width", width, "First-level channels")->check(CLI::PositiveNumber);
  train_task->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  train_task->add_option("--steps", steps, "Steps per epoch")->check(CLI::PositiveNumber);
  train_task->add_option("--batch", batch)->check(CLI::PositiveNumber);
  train_task->add_option("--crop", crop, "Square crop size")->check(CLI::PositiveNumber);
  train_task->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber);
  train_task->add_option("--p-invert", p_invert, "Intensity-inversion probability")->check(CLI::Range(0.0, 1.0));
  train_task->add_option("--train-gsd", train_gsd, "Rescale the corpus to this GSD first");
  train_task->add_option("--name", name, "Output descriptor stem");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Recalibrate batch-norm statistics");
  std::string model, mode, split, branch, scene;
  adapt->add_option("--model", model, "Task descriptor")->required();
  adapt->add_option("--mode", mode)->check(CLI::IsMember({"sample_wise", "dataset_wise"}));
  adapt->add_option("--dataset", dataset, "Dataset root");
  adapt->add_option("--split", split);
  adapt->add_option("--branch", branch)->check(CLI::IsMember({"LR", "BICUBIC", "HR", "lr", "bicubic", "hr"}));
  adapt->add_option("--scene", scene, "Scene id (sample_wise)");
  adapt->add_option("--name", name, "Output descriptor stem");

  // eval
  app.add_subcommand("eval", "Three-branch evaluation over the configured split");

  // verdict
  auto* verdict = app.add_subcommand("verdict", "Record a human judgement");
  std::string task, judgement, annotator, timestamp;
  verdict->add_option("--scene", scene)->required();
  verdict->add_option("--task", task)->required();
  verdict->add_option("--mode", mode, "Adaptation mode; default every mode");
  verdict->add_option("--verdict", judgement)->required()->check(CLI::IsMember({"better", "worse", "unclear"}));
  verdict->add_option("--annotator", annotator);
  verdict->add_option("--timestamp", timestamp, "ISO 8601; default now");

  // train-sr
  auto* train_sr = app.add_subcommand("train-sr", "Task-driven SR training");
  train_sr->add_option("--task", task, "Task id in the config");
  train_sr->add_option("--blocks", blocks)->check(CLI::PositiveNumber);
  train_sr->add_option("--width", width)->check(CLI::PositiveNumber);
  train_sr->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  train_sr->add_option("--steps", steps)->check(CLI::PositiveNumber);
  train_sr->add_option("--batch", batch)->check(CLI::PositiveNumber);
  train_sr->add_option("--crop", crop, "LR crop size")->check(CLI::PositiveNumber);
  train_sr->add_option("--lr", lr)->check(CLI::PositiveNumber);
  train_sr->add_option("--name", name, "Output weights stem");

  // report
  auto* report = app.add_subcommand("report", "Aggregate verdicts and render panels");
  int panels = 3;
  report->add_option("--panels", panels, "Panels per task")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc != 0 && app.get_subcommands().empty()) std::cerr << '\n' << app.help();
    return rc == 0 ? 0 : kExitUsage;
  }

  if (srtask_set_log(json_logs ? 1 : 0, log_level) != SRTASK_OK) {
    std::cerr << "srtask: " << srtask_last_error() << '\n';
    return kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  json req = json::object();
  if (!out.empty()) req["out"] = out;
  if (!config.empty()) req["config"] = config;
  if (seed) req["seed"] = *seed;

  const std::string cmd = sub->get_name();
  if (cmd == "synth") {
    put(req, sub, "--spec", "spec", spec);
    put(req, sub, "--scenes", "n_scenes", n_scenes);
    put(req, sub, "--domain", "domain", domain);
  } else if (cmd == "train-task") {
    put(req, sub, "--dataset", "dataset", dataset);
    put(req, sub, "--target", "target", target);
    put(req, sub, "--bands", "bands", bands);
    put(req, sub, "--depth", "depth", depth);
    put(req, sub, "--width", "width", width);
    put(req, sub, "--epochs", "epochs", epochs);
    put(req, sub, "--steps", "steps", steps);
    put(req, sub, "--batch", "batch", batch);
    put(req, sub, "--crop", "crop", crop);
    put(req, sub, "--lr", "lr", lr);
    put(req, sub, "--p-invert", "p_invert", p_invert);
    put(req, sub, "--train-gsd", "train_gsd", train_gsd);
    put(req, sub, "--name", "name", name);
  } else if (cmd == "adapt") {
    put(req, sub, "--model", "model", model);
    put(req, sub, "--mode", "mode", mode);
    put(req, sub, "--dataset", "dataset", dataset);
    put(req, sub, "--split", "split", split);
    put(req, sub, "--branch", "branch", branch);
    put(req, sub, "--scene", "scene", scene);
    put(req, sub, "--name", "name", name);
  } else if (cmd == "verdict") {
    req["scene"] = scene;
    req["task"] = task;
    req["verdict"] = judgement;
    put(req, sub, "--mode", "mode", mode);
    put(req, sub, "--annotator", "annotator", annotator);
    put(req, sub, "--timestamp", "timestamp", timestamp);
  } else if (cmd == "train-sr") {
    put(req, sub, "--task", "task", task);
    put(req, sub, "--blocks", "blocks", blocks);
    put(req, sub, "--width", "width", width);
    put(req, sub, "--epochs", "epochs", epochs);
    put(req, sub, "--steps", "steps", steps);
    put(req, sub, "--batch", "batch", batch);
    put(req, sub, "--crop", "crop", crop);
    put(req, sub, "--lr", "lr", lr);
    put(req, sub, "--name", "name", name);
  } else if (cmd == "report") {
    put(req, sub, "--panels", "panels", panels);
  }

  char* result = nullptr;
  const srtask_status st = srtask_run_command(cmd.c_str(), req.dump().c_str(), &result);
  if (st != SRTASK_OK) {
    std::cerr << "srtask " << cmd << ": " << srtask_status_name(st) << " error: " << srtask_last_error() << '\n';
    if (st == SRTASK_ERR_USAGE) std::cerr << "run 'srtask " << cmd << " --help' for usage\n";
    return st == SRTASK_ERR_USAGE ? kExitUsage : kExitFailure;
  }
  std::cout << result << '\n';
  srtask_string_free(result);
  return 0;
}
