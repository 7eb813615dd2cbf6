// SPDX-License-Identifier: Apache-2.0
#include "srtask/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <set>

#include <json.hpp>

#include "srtask/error.hpp"
#include "srtask/image_io.hpp"
#include "srtask/log.hpp"

namespace srtask::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Commands that run without a config are identified by their own arguments.
std::string args_hash(const json& args) { return hex16(fnv1a64(args.dump())); }

fs::path require_out(const Context& ctx, const fs::path& fallback = {}) {
  const fs::path out = !ctx.out.empty() ? ctx.out : fallback;
  require(!out.empty(), ErrorKind::Usage, "no output directory (--out)");
  fs::create_directories(out);
  return out;
}

RunConfig require_config(const Context& ctx) {
  require(!ctx.config.empty(), ErrorKind::Usage, "this command needs --config");
  RunConfig c = load_run_config(ctx.config);
  if (ctx.seed) c.seed = *ctx.seed;
  return c;
}

fs::path resolve_dataset(const Context& ctx, const fs::path& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  if (!ctx.config.empty()) return load_run_config(ctx.config).dataset;
  if (const char* env = std::getenv("SRTASK_DATA_ROOT"); env && *env) return env;
  fail(ErrorKind::Usage, "no dataset given (--dataset, config or SRTASK_DATA_ROOT)");
}

DatasetManifest open_dataset(const fs::path& root) {
  require(fs::exists(root / "manifest.json"), ErrorKind::Usage, "dataset " + root.string() + " has no manifest.json");
  return load_manifest(root);
}

std::string csv_header(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

// Adds a "run" object to a saved task descriptor.
void stamp_descriptor(const fs::path& descriptor, const std::string& hash, std::uint64_t seed) {
  json d = json::parse(io::read_text(descriptor));
  d["run"] = {{"config_hash", hash}, {"seed", seed}};
  io::write_text(descriptor, d.dump(2) + "\n");
}

std::vector<TaskSuitabilityReport> aggregate_all(const std::vector<SceneVerdict>& verdicts,
                                                 const std::vector<std::string>& task_order, double theta) {
  std::vector<TaskSuitabilityReport> reports;
  for (const auto& t : task_order) reports.push_back(aggregate_suitability(verdicts, t, theta));
  return reports;
}

void write_reports(const fs::path& out, const std::vector<TaskSuitabilityReport>& reports, const std::string& hash,
                   std::uint64_t seed) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(json::parse(report_to_json(r)));
  const json s{{"config_hash", hash}, {"seed", seed}, {"reports", arr}};
  io::write_text(out / "suitability.json", s.dump(2) + "\n");
  io::write_text(out / "metrics.json", metrics_json(reports, hash, seed));
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ----------------------------------------------------------------------- synth

DatasetManifest synth(const Context& ctx, const SynthArgs& args) {
  require(args.n_scenes >= 1, ErrorKind::Usage, "n_scenes must be positive");
  const fs::path out = require_out(ctx);
  SynthSpec spec = args.spec.empty() ? SynthSpec{} : synth_spec_from_json(io::read_text(args.spec));
  if (ctx.seed) spec.seed = *ctx.seed;
  validate_spec(spec);
  const std::string domain = args.domain == Domain::A ? "A" : "B";
  const std::string hash = args_hash({{"command", "synth"},
                                      {"spec", json::parse(synth_spec_to_json(spec))},
                                      {"n_scenes", args.n_scenes},
                                      {"domain", domain}});
  DatasetManifest m = generate_corpus(spec, args.n_scenes, args.domain, out);
  m.provenance += "; config_hash " + hash;
  save_manifest(m);
  log::info("synth: wrote " + std::to_string(args.n_scenes) + " scenes (domain " + domain + ") to " + out.string());
  return m;
}

// ------------------------------------------------------------------ train-task

TrainTaskResult train_task(const Context& ctx, const TrainTaskArgs& args) {
  const fs::path out = require_out(ctx);
  const fs::path root = resolve_dataset(ctx, args.dataset);
  const DatasetManifest manifest = open_dataset(root);
  const std::uint64_t seed = ctx.seed.value_or(1);

  auto samples = [&](const std::string& split) {
    std::vector<SegSample> s;
    for (const auto& id : manifest.ids(split)) {
      const Scene scene = load_scene(root, id, args.bands);
      s.push_back({scene.hr, load_target_mask(root, id, args.target)});
    }
    if (args.train_gsd > 0) s = rescale_training_corpus(s, args.train_gsd);
    return s;
  };
  const std::vector<SegSample> train = samples("train");
  const std::vector<SegSample> val = samples("val");
  require(!train.empty(), ErrorKind::Data, "dataset has no training scenes");

  SegTrainConfig cfg;
  cfg.arch = UNetConfig{args.depth, args.width, static_cast<int>(args.bands.size())};
  cfg.bands = args.bands;
  cfg.target = args.target;
  cfg.epochs = args.epochs;
  cfg.steps_per_epoch = args.steps;
  cfg.batch = args.batch;
  cfg.crop = args.crop;
  cfg.lr = args.lr;
  cfg.p_invert = args.p_invert;
  cfg.seed = seed;
  cfg.on_epoch = [](const EpochLog& e) {
    log::info("train-task: epoch " + std::to_string(e.epoch) + " loss " + fmt3(e.train_loss) + " val_iou " +
              fmt3(e.val_iou));
  };

  const std::string hash = args_hash({{"command", "train-task"},
                                      {"dataset", root.string()},
                                      {"target", args.target},
                                      {"bands", args.bands},
                                      {"depth", args.depth},
                                      {"width", args.width},
                                      {"epochs", args.epochs},
                                      {"steps", args.steps},
                                      {"batch", args.batch},
                                      {"crop", args.crop},
                                      {"lr", args.lr},
                                      {"p_invert", args.p_invert},
                                      {"train_gsd", args.train_gsd},
                                      {"seed", seed}});

  SegTrainResult res = segmentation_train(train, val, cfg);
  res.model.training_gsd = args.train_gsd > 0 ? args.train_gsd : train.front().image.gsd();
  const fs::path descriptor = out / (args.name + ".json");
  save_task_model(res.model, descriptor);
  stamp_descriptor(descriptor, hash, seed);

  std::string csv = csv_header(hash, seed) + "epoch,train_loss,val_iou\n";
  for (const auto& e : res.log) {
    char line[96];
    std::snprintf(line, sizeof line, "%d,%.8g,%.8g\n", e.epoch, e.train_loss, e.val_iou);
    csv += line;
  }
  io::write_text(out / (args.name + "_log.csv"), csv);
  return {descriptor, res.log};
}

// ----------------------------------------------------------------------- adapt

fs::path adapt(const Context& ctx, const AdaptArgs& args) {
  require(args.mode != AdaptMode::None, ErrorKind::Usage, "adapt needs sample_wise or dataset_wise");
  require(!args.model.empty(), ErrorKind::Usage, "adapt needs --model");
  const fs::path out = require_out(ctx);
  const fs::path root = resolve_dataset(ctx, args.dataset);
  const DatasetManifest manifest = open_dataset(root);
  const TaskModel model = load_task_model(args.model);
  const auto bi = static_cast<std::size_t>(args.branch);

  std::vector<std::string> ids;
  if (args.mode == AdaptMode::SampleWise) {
    require(!args.scene.empty(), ErrorKind::Usage, "sample_wise adaptation needs --scene");
    ids = {args.scene};
  } else {
    ids = manifest.ids(args.split);
    require(!ids.empty(), ErrorKind::Data, "split '" + args.split + "' is empty");
  }
  std::vector<Raster> pool;
  for (const auto& id : ids) pool.push_back(branch_inputs(load_scene(root, id))[bi]);

  const std::string source = root.string() + ":" + (args.mode == AdaptMode::SampleWise ? args.scene : args.split) +
                             ":" + to_string(args.branch);
  const TaskModel adapted = adapt_model(model, args.mode, pool, source);
  const std::uint64_t seed = ctx.seed.value_or(1);
  const std::string hash = args_hash({{"command", "adapt"},
                                      {"model", args.model.string()},
                                      {"mode", to_string(args.mode)},
                                      {"source", source}});
  const fs::path descriptor = out / (args.name + ".json");
  save_task_model(adapted, descriptor);
  stamp_descriptor(descriptor, hash, seed);
  log::info("adapt: " + std::string(to_string(args.mode)) + " over " + std::to_string(pool.size()) + " image(s) -> " +
            descriptor.string());
  return descriptor;
}

// ------------------------------------------------------------------------ eval

EvalResult eval(const Context& ctx) {
  const RunConfig cfg = require_config(ctx);
  validate_run_config(cfg);
  require(!cfg.tasks.empty(), ErrorKind::Usage, "config lists no tasks");
  const fs::path out = require_out(ctx, cfg.out);
  const DatasetManifest manifest = open_dataset(cfg.dataset);
  const std::vector<std::string> ids = manifest.ids(cfg.split);
  require(!ids.empty(), ErrorKind::Data, "split '" + cfg.split + "' is empty");
  if (cfg.scale > 0)
    for (const auto& id : ids) {
      const int s = load_scene_meta(cfg.dataset / id).scale;
      require(s == cfg.scale, ErrorKind::Data,
              "scene " + id + " has scale " + std::to_string(s) + ", config expects " + std::to_string(cfg.scale));
    }

  EvalResult r;
  r.config_hash = config_hash(cfg);
  r.seed = cfg.seed;
  EvalOptions opt;
  opt.epsilon_px = cfg.thresholds.epsilon_px;
  opt.reference_metrics = cfg.reference_metrics;
  opt.threads = cfg.threads;

  std::vector<std::string> order;
  for (const auto& entry : cfg.tasks) {
    const TaskSpec spec = make_task_spec(entry, cfg);
    auto vs = evaluate_corpus(cfg.dataset, ids, spec, cfg.adapt_modes, opt);
    for (auto& v : vs) {
      v.config_hash = r.config_hash;
      v.seed = r.seed;
      if (!v.error.empty()) log::warn("eval: " + v.task + " / " + v.scene_id + " skipped: " + v.error);
    }
    r.verdicts.insert(r.verdicts.end(), vs.begin(), vs.end());
    order.push_back(entry.id);
  }

  // A fresh run replaces earlier results; human verdicts are appended later.
  fs::remove(out / "verdicts.jsonl");
  VerdictStore store(out / "verdicts.jsonl");
  store.append(r.verdicts);
  r.reports = aggregate_all(r.verdicts, order, cfg.thresholds.theta);
  write_reports(out, r.reports, r.config_hash, r.seed);
  for (const auto& rep : r.reports)
    log::info("eval: " + rep.task + " " + to_string(rep.label) + " (best mode " + rep.best_mode + ", pass " +
              fmt3(rep.pass_fraction) + ")");
  return r;
}

// --------------------------------------------------------------------- verdict

std::vector<SceneVerdict> verdict(const Context& ctx, const VerdictArgs& args) {
  require(!args.scene.empty() && !args.task.empty(), ErrorKind::Usage, "verdict needs --scene and --task");
  const fs::path out = !ctx.out.empty() ? ctx.out : (ctx.config.empty() ? fs::path{} : load_run_config(ctx.config).out);
  require(!out.empty(), ErrorKind::Usage, "no output directory (--out)");
  require(fs::exists(out / "verdicts.jsonl"), ErrorKind::Data, "no evaluated verdicts in " + out.string());
  HumanVerdict h;
  h.verdict = parse_human_judgement(args.verdict);
  h.annotator = args.annotator.empty() ? "anonymous" : args.annotator;
  h.timestamp = args.timestamp.empty() ? utc_timestamp() : args.timestamp;
  VerdictStore store(out / "verdicts.jsonl");
  auto updated = record_human_verdict(store, args.scene, args.task, h, args.mode);
  log::info("verdict: recorded '" + args.verdict + "' for " + args.task + " / " + args.scene + " (" +
            std::to_string(updated.size()) + " record(s))");
  return updated;
}

// -------------------------------------------------------------------- train-sr

TrainSrResult train_sr(const Context& ctx, const TrainSrArgs& args) {
  const RunConfig cfg = require_config(ctx);
  validate_run_config(cfg);
  const fs::path out = require_out(ctx, cfg.out);

  const TaskEntry* entry = nullptr;
  for (const auto& t : cfg.tasks)
    if (args.task.empty() ? t.kind == TaskKind::Segmentation : t.id == args.task) {
      entry = &t;
      break;
    }
  require(entry != nullptr, ErrorKind::Usage,
          args.task.empty() ? "config has no segmentation task" : "config has no task '" + args.task + "'");
  const TaskSpec spec = make_task_spec(*entry, cfg);
  require(spec.model.has_value(), ErrorKind::Usage, "task '" + entry->id + "' has no native segmentation model");
  const TaskModel& task = *spec.model;

  const DatasetManifest manifest = open_dataset(cfg.dataset);
  auto pairs = [&](const std::string& split) {
    std::vector<SRPair> p;
    for (const auto& id : manifest.ids(split)) {
      const Scene s = load_scene(cfg.dataset, id, task.bands);
      p.push_back({s.lr(), s.hr});
    }
    return p;
  };
  const std::vector<SRPair> train = pairs("train");
  const std::vector<SRPair> val = pairs("val");
  require(!train.empty(), ErrorKind::Data, "dataset has no training scenes");

  SRConfig sc;
  sc.scale = train.front().hr.width() / train.front().lr.width();
  sc.blocks = args.blocks;
  sc.width = args.width;
  sc.bands = task.bands;
  SRTrainConfig tc;
  tc.epochs = args.epochs;
  tc.steps_per_epoch = args.steps;
  tc.batch = args.batch;
  tc.lr_crop = args.crop;
  tc.learning_rate = args.lr;
  tc.seed = cfg.seed;

  const std::string hash = config_hash(cfg);
  TrainSrResult r;
  r.training = train_task_driven(SRModel(sc, cfg.seed), train, val, task, cfg.sr_weights, tc,
                                 [](const SREpochLog& e) {
                                   log::info("train-sr: epoch " + std::to_string(e.epoch) + " total " +
                                             fmt3(e.mean.total) + " val_iou " + fmt3(e.val_iou));
                                 });
  r.weights = out / (args.name + ".srtw");
  save_sr_model(r.training.model, r.weights,
                {{"config_hash", hash}, {"seed", std::to_string(cfg.seed)}, {"task", entry->id}});
  io::write_text(out / (args.name + "_log.csv"), csv_header(hash, cfg.seed) + sr_log_csv(r.training.log));
  if (r.training.diverged)
    fail(ErrorKind::Numeric, "SR training diverged (" + r.training.message + "); last finite state saved to " +
                                 r.weights.string());
  return r;
}

// ---------------------------------------------------------------------- report

std::vector<TaskSuitabilityReport> report(const Context& ctx, const ReportArgs& args) {
  std::optional<RunConfig> cfg;
  if (!ctx.config.empty()) cfg = require_config(ctx);
  const fs::path out = !ctx.out.empty() ? ctx.out : (cfg ? cfg->out : fs::path{});
  require(!out.empty(), ErrorKind::Usage, "no output directory (--out)");
  require(fs::exists(out / "verdicts.jsonl"), ErrorKind::Data, "no evaluated verdicts in " + out.string());
  const std::vector<SceneVerdict> verdicts = VerdictStore(out / "verdicts.jsonl").load();
  require(!verdicts.empty(), ErrorKind::Data, "verdict store is empty");

  std::vector<std::string> order;
  std::set<std::string> seen;
  if (cfg)
    for (const auto& t : cfg->tasks)
      if (std::any_of(verdicts.begin(), verdicts.end(), [&](const SceneVerdict& v) { return v.task == t.id; }) &&
          seen.insert(t.id).second)
        order.push_back(t.id);
  for (const auto& v : verdicts)
    if (seen.insert(v.task).second) order.push_back(v.task);

  const std::string hash = cfg ? config_hash(*cfg) : verdicts.front().config_hash;
  const std::uint64_t seed = cfg ? cfg->seed : verdicts.front().seed;
  const double theta = cfg ? cfg->thresholds.theta : 0.8;
  auto reports = aggregate_all(verdicts, order, theta);
  write_reports(out, reports, hash, seed);

  if (!cfg || args.panels <= 0) return reports;
  const AdaptMode mode = cfg->adapt_modes.front();
  const std::string mode_name = to_string(mode);
  fs::create_directories(out / "panels");
  for (const auto& entry : cfg->tasks) {
    std::vector<const SceneVerdict*> picks;
    for (const auto& v : verdicts)
      if (v.task == entry.id && v.mode == mode_name && v.error.empty() &&
          static_cast<int>(picks.size()) < args.panels)
        picks.push_back(&v);
    if (picks.empty()) continue;
    const TaskSpec spec = make_task_spec(entry, *cfg);

    std::optional<DatasetModels> dm;
    if (mode == AdaptMode::DatasetWise && spec.model && spec.external.empty()) {
      std::vector<Scene> pool;
      for (const auto& id : load_manifest(cfg->dataset).ids(cfg->split)) pool.push_back(load_scene(cfg->dataset, id));
      dm = make_dataset_models(*spec.model, pool, cfg->dataset.string() + ":" + cfg->split);
    }
    for (const SceneVerdict* v : picks) {
      const Scene scene = load_scene(cfg->dataset, v->scene_id);
      const auto results = run_three_branch(scene, spec, mode, dm ? &*dm : nullptr);
      const std::vector<std::string> labels = {"LR " + fmt3(v->score_lr.primary),
                                               "BICUBIC " + fmt3(v->score_bicubic.primary), "HR REF"};
      const fs::path png = out / "panels" / (entry.id + "_" + mode_name + "_" + v->scene_id + ".png");
      render_panel(scene, results, labels, png,
                   {{"config_hash", hash},
                    {"seed", std::to_string(seed)},
                    {"scene", v->scene_id},
                    {"task", entry.id},
                    {"mode", mode_name}});
    }
  }
  return reports;
}

// --------------------------------------------------------------- JSON front door

namespace {

template <class T>
T arg(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Usage, std::string("argument '") + key + "' has the wrong type");
  }
}

json report_list(const std::vector<TaskSuitabilityReport>& reports) {
  json a = json::array();
  for (const auto& r : reports) a.push_back(json::parse(report_to_json(r)));
  return a;
}

}  // namespace

std::string run_command(const std::string& name, const std::string& request_json) {
  const json req = request_json.empty() ? json::object() : json::parse(request_json, nullptr, false);
  require(!req.is_discarded() && req.is_object(), ErrorKind::Usage, "request is not a JSON object");
  Context ctx;
  ctx.out = arg<std::string>(req, "out", "");
  ctx.config = arg<std::string>(req, "config", "");
  if (req.contains("seed") && !req["seed"].is_null()) ctx.seed = arg<std::uint64_t>(req, "seed", 0);

  json res;
  if (name == "synth") {
    SynthArgs a;
    a.spec = arg<std::string>(req, "spec", "");
    a.n_scenes = arg<int>(req, "n_scenes", a.n_scenes);
    const std::string d = arg<std::string>(req, "domain", "A");
    require(d == "A" || d == "B", ErrorKind::Usage, "domain must be A or B");
    a.domain = d == "A" ? Domain::A : Domain::B;
    const DatasetManifest m = synth(ctx, a);
    res = {{"root", m.root.string()}, {"n_scenes", m.scenes.size()}, {"provenance", m.provenance}};
  } else if (name == "train-task") {
    TrainTaskArgs a;
    a.dataset = arg<std::string>(req, "dataset", "");
    a.target = arg<std::string>(req, "target", a.target);
    a.bands = arg<std::vector<std::string>>(req, "bands", a.bands);
    a.depth = arg<int>(req, "depth", a.depth);
    a.width = arg<int>(req, "width", a.width);
    a.epochs = arg<int>(req, "epochs", a.epochs);
    a.steps = arg<int>(req, "steps", a.steps);
    a.batch = arg<int>(req, "batch", a.batch);
    a.crop = arg<int>(req, "crop", a.crop);
    a.lr = arg<double>(req, "lr", a.lr);
    a.p_invert = arg<double>(req, "p_invert", a.p_invert);
    a.train_gsd = arg<double>(req, "train_gsd", a.train_gsd);
    a.name = arg<std::string>(req, "name", a.name);
    const auto r = train_task(ctx, a);
    res = {{"descriptor", r.descriptor.string()},
           {"epochs", r.log.size()},
           {"val_iou", r.log.empty() ? 0.0 : r.log.back().val_iou}};
  } else if (name == "adapt") {
    AdaptArgs a;
    a.model = arg<std::string>(req, "model", "");
    a.mode = parse_adapt_mode(arg<std::string>(req, "mode", "dataset_wise"));
    a.dataset = arg<std::string>(req, "dataset", "");
    a.split = arg<std::string>(req, "split", a.split);
    const std::string b = arg<std::string>(req, "branch", "HR");
    if (b == "LR" || b == "lr") a.branch = Branch::LR;
    else if (b == "BICUBIC" || b == "bicubic") a.branch = Branch::Bicubic;
    else if (b == "HR" || b == "hr") a.branch = Branch::HR;
    else fail(ErrorKind::Usage, "unknown branch '" + b + "'");
    a.scene = arg<std::string>(req, "scene", "");
    a.name = arg<std::string>(req, "name", a.name);
    res = {{"descriptor", adapt(ctx, a).string()}};
  } else if (name == "eval") {
    const auto r = eval(ctx);
    res = {{"config_hash", r.config_hash}, {"seed", r.seed}, {"n_verdicts", r.verdicts.size()},
           {"reports", report_list(r.reports)}};
  } else if (name == "verdict") {
    VerdictArgs a;
    a.scene = arg<std::string>(req, "scene", "");
    a.task = arg<std::string>(req, "task", "");
    a.mode = arg<std::string>(req, "mode", "");
    a.verdict = arg<std::string>(req, "verdict", "");
    a.annotator = arg<std::string>(req, "annotator", a.annotator);
    a.timestamp = arg<std::string>(req, "timestamp", "");
    res = {{"updated", verdict(ctx, a).size()}};
  } else if (name == "train-sr") {
    TrainSrArgs a;
    a.task = arg<std::string>(req, "task", "");
    a.blocks = arg<int>(req, "blocks", a.blocks);
    a.width = arg<int>(req, "width", a.width);
    a.epochs = arg<int>(req, "epochs", a.epochs);
    a.steps = arg<int>(req, "steps", a.steps);
    a.batch = arg<int>(req, "batch", a.batch);
    a.crop = arg<int>(req, "crop", a.crop);
    a.lr = arg<double>(req, "lr", a.lr);
    a.name = arg<std::string>(req, "name", a.name);
    const auto r = train_sr(ctx, a);
    res = {{"weights", r.weights.string()},
           {"epochs", r.training.log.size()},
           {"val_iou", r.training.log.empty() ? 0.0 : r.training.log.back().val_iou}};
  } else if (name == "report") {
    ReportArgs a;
    a.panels = arg<int>(req, "panels", a.panels);
    res = {{"reports", report_list(report(ctx, a))}};
  } else {
    fail(ErrorKind::Usage, "unknown command '" + name + "'");
  }
  return res.dump();
}

}  // namespace srtask::pipeline
