// SPDX-License-Identifier: Apache-2.0
// Exercises the shared library through its C interface only.
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "srtask/srtask.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Scratch {
  fs::path path = fs::temp_directory_path() / ("srtask-capi-" + std::to_string(::getpid()));
  Scratch() { fs::create_directories(path); }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

json command(const char* name, const json& req) {
  char* out = nullptr;
  const srtask_status st = srtask_run_command(name, req.dump().c_str(), &out);
  INFO(srtask_last_error());
  REQUIRE(st == SRTASK_OK);
  REQUIRE(out != nullptr);
  const json j = json::parse(out);
  srtask_string_free(out);
  return j;
}

srtask_raster* make(int w, int h, const std::vector<double>& px) {
  const char* names[] = {"B08"};
  srtask_raster* r = nullptr;
  REQUIRE(srtask_raster_create(w, h, 1, names, 10.0, px.data(), &r) == SRTASK_OK);
  return r;
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::string(srtask_version()).size() >= 5);
  CHECK(std::string(srtask_status_name(SRTASK_ERR_DATA)) == "data");
  CHECK(srtask_set_log(0, 2) == SRTASK_OK);
  CHECK(srtask_set_log(0, 7) == SRTASK_ERR_USAGE);
}

TEST_CASE("raster handles") {
  std::vector<double> px(12 * 9);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = 0.001 * static_cast<double>(i);
  srtask_raster* r = make(12, 9, px);
  int w = 0, h = 0, c = 0;
  double gsd = 0;
  REQUIRE(srtask_raster_info(r, &w, &h, &c, &gsd) == SRTASK_OK);
  CHECK(w == 12);
  CHECK(h == 9);
  CHECK(c == 1);
  CHECK(gsd == 10.0);
  const char* name = nullptr;
  REQUIRE(srtask_raster_band_name(r, 0, &name) == SRTASK_OK);
  CHECK(std::string(name) == "B08");
  CHECK(srtask_raster_band_name(r, 1, &name) == SRTASK_ERR_USAGE);

  std::vector<double> back(px.size());
  REQUIRE(srtask_raster_pixels(r, back.data(), back.size()) == SRTASK_OK);
  CHECK(back == px);
  CHECK(srtask_raster_pixels(r, back.data(), back.size() - 1) == SRTASK_ERR_USAGE);
  CHECK(std::string(srtask_last_error()).find("buffer holds") != std::string::npos);

  // Constant image survives bicubic resampling exactly.
  srtask_raster* k = make(6, 6, std::vector<double>(36, 0.37));
  srtask_raster* up = nullptr;
  REQUIRE(srtask_bicubic(k, 18, 18, &up) == SRTASK_OK);
  std::vector<double> upx(18 * 18);
  REQUIRE(srtask_raster_pixels(up, upx.data(), upx.size()) == SRTASK_OK);
  for (double v : upx) CHECK(std::abs(v - 0.37) < 1e-12);
  srtask_raster* down = nullptr;
  REQUIRE(srtask_area_resize(up, 6, 6, &down) == SRTASK_OK);
  REQUIRE(srtask_raster_info(down, &w, &h, nullptr, &gsd) == SRTASK_OK);
  CHECK(w == 6);

  Scratch dir;
  const std::string file = (dir.path / "r.raw").string();
  REQUIRE(srtask_raster_save(r, file.c_str()) == SRTASK_OK);
  srtask_raster* loaded = nullptr;
  REQUIRE(srtask_raster_load(file.c_str(), &loaded) == SRTASK_OK);
  REQUIRE(srtask_raster_info(loaded, &w, &h, &c, &gsd) == SRTASK_OK);
  CHECK(w == 12);
  CHECK(gsd == 10.0);

  srtask_raster* none = reinterpret_cast<srtask_raster*>(0x1);
  CHECK(srtask_raster_load((dir.path / "missing.raw").c_str(), &none) == SRTASK_ERR_IO);
  CHECK(none == nullptr);
  CHECK(srtask_raster_create(0, 3, 1, nullptr, 1.0, nullptr, &none) == SRTASK_ERR_USAGE);
  CHECK(srtask_raster_info(nullptr, &w, &h, &c, &gsd) == SRTASK_ERR_USAGE);

  for (auto* p : {r, k, up, down, loaded}) srtask_raster_free(p);
  srtask_raster_free(nullptr);
}

TEST_CASE("built-in tasks") {
  srtask_raster* flat = make(64, 64, std::vector<double>(64 * 64, 0.3));
  int count = -1;
  std::vector<double> xys(3 * 1000);
  REQUIRE(srtask_keypoints(flat, 1000, xys.data(), 1000, &count) == SRTASK_OK);
  CHECK(count == 0);

  std::vector<double> tex(256 * 256);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x)
      tex[static_cast<std::size_t>(y) * 256 + x] =
          0.5 + 0.2 * std::sin(x * 0.3) * std::cos(y * 0.23) + 0.01 * std::sin(x * 7.1 + y * 3.3);
  srtask_raster* t = make(256, 256, tex);
  REQUIRE(srtask_keypoints(t, 1000, xys.data(), xys.size() / 3, &count) == SRTASK_OK);
  CHECK(count == 1000);
  CHECK(xys[2] >= xys[3 * 999 + 2]);

  std::vector<double> halves(32 * 32, 0.1);
  for (int y = 0; y < 32; ++y)
    for (int x = 16; x < 32; ++x) halves[static_cast<std::size_t>(y) * 32 + x] = 0.9;
  srtask_raster* hv = make(32, 32, halves);
  std::vector<std::int32_t> labels(32 * 32);
  REQUIRE(srtask_partition(hv, 0.5, 0, labels.data(), labels.size(), &count) == SRTASK_OK);
  CHECK(count == 2);
  CHECK(labels.front() != labels.back());
  CHECK(srtask_partition(hv, 0.5, 0, labels.data(), 10, &count) == SRTASK_ERR_USAGE);

  for (auto* p : {flat, t, hv}) srtask_raster_free(p);
}

TEST_CASE("commands, scenes, task and SR models") {
  Scratch dir;
  const fs::path data = dir.path / "data", out = dir.path / "out";
  srtask_set_log(0, 2);
  command("synth", {{"out", data.string()}, {"n_scenes", 5}, {"seed", 4}});
  const json tr = command("train-task", {{"out", out.string()},
                                         {"dataset", data.string()},
                                         {"depth", 2},
                                         {"width", 4},
                                         {"epochs", 1},
                                         {"steps", 2},
                                         {"crop", 32}});
  const std::string descriptor = tr.at("descriptor");

  srtask_scene* scene = nullptr;
  REQUIRE(srtask_scene_load(data.c_str(), "s000", &scene) == SRTASK_OK);
  int scale = 0, n_lr = 0;
  REQUIRE(srtask_scene_info(scene, &scale, &n_lr) == SRTASK_OK);
  CHECK(scale == 3);
  CHECK(n_lr >= 1);
  srtask_raster *hr = nullptr, *lr = nullptr;
  REQUIRE(srtask_scene_hr(scene, &hr) == SRTASK_OK);
  srtask_raster* missing = nullptr;
  CHECK(srtask_scene_lr(scene, 99, &missing) == SRTASK_ERR_USAGE);
  CHECK(missing == nullptr);
  REQUIRE(srtask_scene_lr(scene, 0, &lr) == SRTASK_OK);
  int w = 0, h = 0, c = 0;
  REQUIRE(srtask_raster_info(hr, &w, &h, &c, nullptr) == SRTASK_OK);
  CHECK(c == 4);

  srtask_task_model* model = nullptr;
  REQUIRE(srtask_task_model_load(descriptor.c_str(), &model) == SRTASK_OK);
  std::vector<double> prob(static_cast<std::size_t>(w) * h);
  std::vector<std::uint8_t> mask(prob.size());
  REQUIRE(srtask_segment(model, hr, prob.data(), mask.data(), prob.size()) == SRTASK_OK);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    CHECK(prob[i] >= 0.0);
    CHECK(prob[i] <= 1.0);
    CHECK(mask[i] == (prob[i] >= 0.5 ? 1 : 0));
  }

  const srtask_raster* pool[] = {hr};
  srtask_task_model* adapted = nullptr;
  REQUIRE(srtask_adapt(model, "sample_wise", pool, 1, &adapted) == SRTASK_OK);
  srtask_task_model_free(adapted);
  CHECK(srtask_adapt(model, "sometimes", pool, 1, &adapted) == SRTASK_ERR_USAGE);
  CHECK(adapted == nullptr);
  REQUIRE(srtask_adapt(model, "dataset_wise", pool, 1, &adapted) == SRTASK_OK);
  REQUIRE(srtask_task_model_save(adapted, (out / "adapted.json").c_str()) == SRTASK_OK);
  CHECK(json::parse(std::ifstream(out / "adapted.json")).at("adaptation").at("mode") == "dataset_wise");

  const json cfg{{"dataset", data.string()}, {"tasks", {{{"kind", "segmentation"}, {"model", descriptor}}}}};
  std::ofstream(dir.path / "cfg.json") << cfg.dump();
  const json sr = command("train-sr", {{"out", out.string()},
                                       {"config", (dir.path / "cfg.json").string()},
                                       {"blocks", 1},
                                       {"width", 4},
                                       {"epochs", 1},
                                       {"steps", 1},
                                       {"crop", 8}});
  srtask_sr_model* srm = nullptr;
  REQUIRE(srtask_sr_model_load(sr.at("weights").get<std::string>().c_str(), &srm) == SRTASK_OK);
  REQUIRE(srtask_sr_model_scale(srm, &scale) == SRTASK_OK);
  CHECK(scale == 3);
  // The model picks its band out of the 4-band LR image.
  srtask_raster* up = nullptr;
  int lw = 0, lh = 0;
  double lgsd = 0, ugsd = 0;
  REQUIRE(srtask_raster_info(lr, &lw, &lh, nullptr, &lgsd) == SRTASK_OK);
  REQUIRE(srtask_sr_infer(srm, lr, &up) == SRTASK_OK);
  REQUIRE(srtask_raster_info(up, &w, &h, &c, &ugsd) == SRTASK_OK);
  CHECK(w == 3 * lw);
  CHECK(h == 3 * lh);
  CHECK(c == 1);
  CHECK(ugsd == doctest::Approx(lgsd / 3));

  const char* other[] = {"B02"};
  srtask_raster* wrong = nullptr;
  REQUIRE(srtask_raster_create(8, 8, 1, other, 10.0, nullptr, &wrong) == SRTASK_OK);
  srtask_raster* bad = nullptr;
  CHECK(srtask_sr_infer(srm, wrong, &bad) != SRTASK_OK);
  CHECK(bad == nullptr);

  srtask_sr_model_free(srm);
  srtask_task_model_free(model);
  srtask_task_model_free(adapted);
  srtask_scene_free(scene);
  for (auto* p : {hr, lr, wrong, up}) srtask_raster_free(p);
}

TEST_CASE("command errors map to status codes") {
  char* out = reinterpret_cast<char*>(0x1);
  CHECK(srtask_run_command("frobnicate", "{}", &out) == SRTASK_ERR_USAGE);
  CHECK(out == nullptr);
  CHECK(srtask_run_command("eval", "{\"config\": \"/nonexistent/c.json\"}", &out) == SRTASK_ERR_USAGE);
  CHECK(srtask_run_command("report", "{\"out\": \"/nonexistent\"}", &out) == SRTASK_ERR_DATA);
  CHECK(srtask_run_command(nullptr, "{}", &out) == SRTASK_ERR_USAGE);
}

TEST_CASE("last error is per thread") {
  srtask_raster* r = nullptr;
  CHECK(srtask_raster_create(0, 0, 1, nullptr, 1, nullptr, &r) == SRTASK_ERR_USAGE);
  const std::string mine = srtask_last_error();
  std::string theirs;
  std::thread th([&] {
    srtask_raster_load("/nonexistent.raw", &r);
    theirs = srtask_last_error();
  });
  th.join();
  CHECK(srtask_last_error() == mine);
  CHECK(theirs != mine);
}
