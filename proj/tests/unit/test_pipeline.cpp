// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <json.hpp>

#include "helpers.hpp"
#include "srtask/error.hpp"
#include "srtask/image_io.hpp"
#include "srtask/pipeline.hpp"

using namespace srtask;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_json(const fs::path& p) { return json::parse(io::read_text(p)); }

}  // namespace

TEST_CASE("end-to-end pipeline: synth, train, eval, verdict, report, adapt, train-sr") {
  testutil::TempDir dir;
  const fs::path data = dir / "data", models = dir / "models", out = dir / "out";

  SynthSpec spec;
  spec.width = spec.height = 48;
  io::write_text(dir / "spec.json", synth_spec_to_json(spec));
  const auto m = pipeline::synth({data, {}, 21}, {dir / "spec.json", 10, Domain::A});
  CHECK(m.scenes.size() == 10);
  CHECK(m.provenance.find("config_hash") != std::string::npos);
  CHECK(synth_spec_from_json(io::read_text(data / "synth_spec.json")).seed == 21);

  pipeline::TrainTaskArgs ta;
  ta.dataset = data;
  ta.depth = 2;
  ta.width = 4;
  ta.epochs = 1;
  ta.steps = 4;
  ta.batch = 2;
  ta.crop = 32;
  const auto tr = pipeline::train_task({models, {}, 3}, ta);
  CHECK(fs::exists(tr.descriptor));
  CHECK(read_json(tr.descriptor).at("run").at("seed") == 3);
  const std::string log = io::read_text(models / "task_model_log.csv");
  CHECK(log.rfind("# config_hash=", 0) == 0);
  CHECK(log.find("epoch,train_loss,val_iou\n") != std::string::npos);

  const json cfg{{"dataset", data.string()},
                 {"tasks", {{{"id", "roads"}, {"kind", "segmentation"}, {"model", tr.descriptor.string()}},
                            {{"kind", "keypoints"}, {"n_keypoints", 100}}}},
                 {"adapt_modes", {"none", "dataset_wise"}},
                 {"seed", 5},
                 {"threads", 2}};
  io::write_text(dir / "cfg.json", cfg.dump());
  const pipeline::Context ctx{out, dir / "cfg.json", std::nullopt};

  const auto r1 = pipeline::eval(ctx);
  CHECK(r1.verdicts.size() == 2 * 2 * 2);  // tasks x modes x test scenes
  CHECK(r1.reports.size() == 2);
  for (const auto& v : r1.verdicts) {
    CHECK(v.config_hash == r1.config_hash);
    CHECK(v.seed == 5);
  }
  const std::string metrics1 = io::read_text(out / "metrics.json");
  const json mj = json::parse(metrics1);
  CHECK(mj.at("config_hash") == r1.config_hash);
  CHECK(mj.at("seed") == 5);
  CHECK(mj.at("tasks").at("roads").at("modes").contains("dataset_wise"));
  CHECK(mj.at("tasks").at("keypoints").at("modes").at("none").contains("pass_fraction"));
  CHECK(read_json(out / "suitability.json").at("reports").size() == 2);

  // A rerun overwrites the store and reproduces the metrics byte for byte.
  pipeline::eval(ctx);
  CHECK(io::read_text(out / "metrics.json") == metrics1);
  CHECK(VerdictStore(out / "verdicts.jsonl").load().size() == r1.verdicts.size());

  const std::string scene = r1.verdicts.front().scene_id;
  const auto upd = pipeline::verdict(ctx, {scene, "roads", "none", "better", "ann", "2026-01-01T00:00:00Z"});
  CHECK(upd.size() == 1);
  CHECK_THROWS_AS(pipeline::verdict(ctx, {"nope", "roads", "", "better", "", ""}), Error);
  CHECK_THROWS_AS(pipeline::verdict(ctx, {scene, "roads", "", "meh", "", ""}), Error);

  const auto reports = pipeline::report(ctx, {2});
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].task == "roads");
  CHECK(reports[0].n_human == 1);
  const json after = read_json(out / "metrics.json");
  CHECK(after.at("tasks").at("roads").contains("human_agreement"));
  int panels = 0;
  for (const auto& e : fs::directory_iterator(out / "panels")) {
    ++panels;
    const auto png = io::read_png(e.path());
    CHECK(png.text.at("config_hash") == r1.config_hash);
    CHECK(png.text.at("seed") == "5");
    CHECK(png.text.at("mode") == "none");
  }
  CHECK(panels == 4);
  CHECK(fs::exists(out / "panels" / ("roads_none_" + scene + ".png")));

  pipeline::AdaptArgs aa;
  aa.model = tr.descriptor;
  aa.dataset = data;
  const fs::path adapted = pipeline::adapt({models, {}, std::nullopt}, aa);
  const json ad = read_json(adapted);
  CHECK(ad.at("adaptation").at("mode") == "dataset_wise");
  CHECK(ad.contains("run"));
  aa.mode = AdaptMode::SampleWise;
  CHECK_THROWS_AS(pipeline::adapt({models, {}, std::nullopt}, aa), Error);  // needs a scene

  pipeline::TrainSrArgs sa;
  sa.blocks = 1;
  sa.width = 4;
  sa.epochs = 1;
  sa.steps = 2;
  sa.batch = 2;
  sa.crop = 8;
  const auto sr = pipeline::train_sr(ctx, sa);
  CHECK(fs::exists(sr.weights));
  CHECK(load_sr_model(sr.weights).config().scale == 3);
  CHECK(io::read_text(out / "sr_model_log.csv").rfind("# config_hash=" + r1.config_hash, 0) == 0);
}

TEST_CASE("command front door") {
  testutil::TempDir dir;
  auto kind_of = [](auto&& f) -> std::optional<ErrorKind> {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return std::nullopt;
  };
  CHECK(kind_of([] { pipeline::run_command("frobnicate", "{}"); }) == ErrorKind::Usage);
  CHECK(kind_of([] { pipeline::run_command("eval", "[]"); }) == ErrorKind::Usage);
  CHECK(kind_of([] { pipeline::run_command("eval", "{}"); }) == ErrorKind::Usage);
  CHECK(kind_of([&] { pipeline::run_command("report", json{{"out", dir.path.string()}}.dump()); }) ==
        ErrorKind::Data);
  CHECK(kind_of([&] { pipeline::run_command("synth", json{{"out", "x"}, {"n_scenes", "many"}}.dump()); }) ==
        ErrorKind::Usage);

  const std::string res =
      pipeline::run_command("synth", json{{"out", (dir / "d").string()}, {"n_scenes", 3}, {"seed", 2}}.dump());
  CHECK(json::parse(res).at("n_scenes") == 3);
  CHECK(pipeline::utc_timestamp().size() == 20);
}
