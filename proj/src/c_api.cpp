// SPDX-License-Identifier: Apache-2.0
#include "srtask/srtask.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <new>
#include <string>

#include <json.hpp>

#include "srtask/adapt.hpp"
#include "srtask/error.hpp"
#include "srtask/log.hpp"
#include "srtask/pipeline.hpp"
#include "srtask/resample.hpp"
#include "srtask/scene_store.hpp"
#include "srtask/tasks.hpp"
#include "srtask/train_sr.hpp"

#ifndef SRTASK_VERSION
#define SRTASK_VERSION "0.0.0"
#endif

struct srtask_raster {
  srtask::Raster r;
};
struct srtask_scene {
  srtask::Scene s;
};
struct srtask_task_model {
  srtask::TaskModel m;
};
struct srtask_sr_model {
  srtask::SRModel m;
};

namespace {

using srtask::Error;
using srtask::ErrorKind;

thread_local std::string g_last_error;

srtask_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return SRTASK_ERR_USAGE;
    case ErrorKind::Data: return SRTASK_ERR_DATA;
    case ErrorKind::Io: return SRTASK_ERR_IO;
    case ErrorKind::Contract: return SRTASK_ERR_CONTRACT;
    case ErrorKind::Numeric: return SRTASK_ERR_NUMERIC;
  }
  return SRTASK_ERR_INTERNAL;
}

template <class F>
srtask_status guarded(F&& f) {
  try {
    f();
    return SRTASK_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("JSON: ") + e.what();
    return SRTASK_ERR_DATA;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return SRTASK_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SRTASK_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SRTASK_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return SRTASK_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) srtask::fail(ErrorKind::Usage, std::string(what) + " is NULL");
}

srtask_raster* wrap(srtask::Raster r) { return new srtask_raster{std::move(r)}; }

}  // namespace

extern "C" {

const char* srtask_version(void) { return SRTASK_VERSION; }

const char* srtask_last_error(void) { return g_last_error.c_str(); }

const char* srtask_status_name(srtask_status s) {
  switch (s) {
    case SRTASK_OK: return "ok";
    case SRTASK_ERR_USAGE: return "usage";
    case SRTASK_ERR_DATA: return "data";
    case SRTASK_ERR_IO: return "io";
    case SRTASK_ERR_CONTRACT: return "contract";
    case SRTASK_ERR_NUMERIC: return "numeric";
    case SRTASK_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

srtask_status srtask_set_log(int json, int min_level) {
  return guarded([&] {
    srtask::require(min_level >= 0 && min_level <= 3, ErrorKind::Usage, "log level must be 0..3");
    srtask::log::set_min_level(static_cast<srtask::log::Level>(min_level));
    if (json) {
      srtask::log::set_sink([](srtask::log::Level l, const std::string& msg) {
        std::cerr << nlohmann::json{{"level", srtask::log::level_name(l)}, {"msg", msg}}.dump() << '\n';
      });
    } else {
      srtask::log::set_sink({});
    }
  });
}

// ------------------------------------------------------------------ rasters

srtask_status srtask_raster_create(int width, int height, int n_bands, const char* const* band_names, double gsd,
                                   const double* pixels, srtask_raster** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    srtask::require(width > 0 && height > 0 && n_bands > 0, ErrorKind::Usage, "raster dimensions must be positive");
    std::vector<std::string> names;
    for (int i = 0; i < n_bands; ++i)
      names.push_back(band_names && band_names[i] ? band_names[i] : "B" + std::to_string(i + 1));
    srtask::Raster r(width, height, names, gsd);
    if (pixels) std::memcpy(r.pixels().data(), pixels, r.pixels().size() * sizeof(double));
    *out = wrap(std::move(r));
  });
}

srtask_status srtask_raster_load(const char* path, srtask_raster** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = wrap(srtask::load_raster(path));
  });
}

srtask_status srtask_raster_save(const srtask_raster* raster, const char* path) {
  return guarded([&] {
    need(raster, "raster");
    need(path, "path");
    srtask::save_raster(raster->r, path);
  });
}

void srtask_raster_free(srtask_raster* raster) { delete raster; }

srtask_status srtask_raster_info(const srtask_raster* raster, int* width, int* height, int* n_bands, double* gsd) {
  return guarded([&] {
    need(raster, "raster");
    if (width) *width = raster->r.width();
    if (height) *height = raster->r.height();
    if (n_bands) *n_bands = raster->r.channels();
    if (gsd) *gsd = raster->r.gsd();
  });
}

srtask_status srtask_raster_band_name(const srtask_raster* raster, int band, const char** name) {
  return guarded([&] {
    need(raster, "raster");
    need(name, "name");
    srtask::require(band >= 0 && band < raster->r.channels(), ErrorKind::Usage, "band index out of range");
    *name = raster->r.bands()[static_cast<std::size_t>(band)].c_str();
  });
}

srtask_status srtask_raster_pixels(const srtask_raster* raster, double* dst, size_t n) {
  return guarded([&] {
    need(raster, "raster");
    need(dst, "dst");
    const auto& px = raster->r.pixels();
    srtask::require(n == px.size(), ErrorKind::Usage,
                    "buffer holds " + std::to_string(n) + " values, raster has " + std::to_string(px.size()));
    std::memcpy(dst, px.data(), n * sizeof(double));
  });
}

srtask_status srtask_bicubic(const srtask_raster* raster, int width, int height, srtask_raster** out) {
  return guarded([&] {
    need(raster, "raster");
    need(out, "out");
    *out = nullptr;
    *out = wrap(srtask::bicubic_resize(raster->r, width, height));
  });
}

srtask_status srtask_area_resize(const srtask_raster* raster, int width, int height, srtask_raster** out) {
  return guarded([&] {
    need(raster, "raster");
    need(out, "out");
    *out = nullptr;
    *out = wrap(srtask::area_resize(raster->r, width, height));
  });
}

// ------------------------------------------------------------------- scenes

srtask_status srtask_scene_load(const char* root, const char* id, srtask_scene** out) {
  return guarded([&] {
    need(root, "root");
    need(id, "id");
    need(out, "out");
    *out = nullptr;
    *out = new srtask_scene{srtask::load_scene(root, id)};
  });
}

void srtask_scene_free(srtask_scene* scene) { delete scene; }

srtask_status srtask_scene_info(const srtask_scene* scene, int* scale, int* n_lr) {
  return guarded([&] {
    need(scene, "scene");
    if (scale) *scale = scene->s.scale;
    if (n_lr) *n_lr = static_cast<int>(scene->s.lr_images.size());
  });
}

srtask_status srtask_scene_hr(const srtask_scene* scene, srtask_raster** out) {
  return guarded([&] {
    need(scene, "scene");
    need(out, "out");
    *out = wrap(scene->s.hr);
  });
}

srtask_status srtask_scene_lr(const srtask_scene* scene, int index, srtask_raster** out) {
  return guarded([&] {
    need(scene, "scene");
    need(out, "out");
    *out = nullptr;
    srtask::require(index >= 0 && index < static_cast<int>(scene->s.lr_images.size()), ErrorKind::Usage,
                    "LR index out of range");
    *out = wrap(scene->s.lr_images[static_cast<std::size_t>(index)]);
  });
}

// -------------------------------------------------------------- task models

srtask_status srtask_task_model_load(const char* descriptor, srtask_task_model** out) {
  return guarded([&] {
    need(descriptor, "descriptor");
    need(out, "out");
    *out = nullptr;
    *out = new srtask_task_model{srtask::load_task_model(descriptor)};
  });
}

srtask_status srtask_task_model_save(const srtask_task_model* model, const char* descriptor) {
  return guarded([&] {
    need(model, "model");
    need(descriptor, "descriptor");
    srtask::save_task_model(model->m, descriptor);
  });
}

void srtask_task_model_free(srtask_task_model* model) { delete model; }

srtask_status srtask_adapt(const srtask_task_model* model, const char* mode, const srtask_raster* const* images,
                           size_t n_images, srtask_task_model** out) {
  return guarded([&] {
    need(model, "model");
    need(mode, "mode");
    need(out, "out");
    *out = nullptr;
    srtask::require(n_images == 0 || images, ErrorKind::Usage, "images is NULL");
    std::vector<srtask::Raster> pool;
    for (size_t i = 0; i < n_images; ++i) {
      need(images[i], "image");
      pool.push_back(images[i]->r);
    }
    *out = new srtask_task_model{srtask::adapt_model(model->m, srtask::parse_adapt_mode(mode), pool, "c-api")};
  });
}

srtask_status srtask_segment(const srtask_task_model* model, const srtask_raster* raster, double* prob,
                             uint8_t* mask, size_t n) {
  return guarded([&] {
    need(model, "model");
    need(raster, "raster");
    srtask::require(n == raster->r.plane_size(), ErrorKind::Usage, "buffer size must equal width * height");
    const srtask::SegMask s = srtask::segmentation_infer(model->m, raster->r);
    if (prob) std::copy(s.prob.data.begin(), s.prob.data.end(), prob);
    if (mask)
      for (size_t i = 0; i < n; ++i) mask[i] = s.binary.data[i] ? 1 : 0;
  });
}

srtask_status srtask_keypoints(const srtask_raster* raster, int n_requested, double* xys, size_t capacity,
                               int* count) {
  return guarded([&] {
    need(raster, "raster");
    need(count, "count");
    srtask::require(capacity == 0 || xys, ErrorKind::Usage, "xys is NULL");
    const srtask::KeypointSet k = srtask::keypoint_detect(raster->r, n_requested);
    *count = static_cast<int>(k.points.size());
    for (size_t i = 0; i < k.points.size() && i < capacity; ++i) {
      xys[3 * i] = k.points[i].x;
      xys[3 * i + 1] = k.points[i].y;
      xys[3 * i + 2] = k.points[i].score;
    }
  });
}

srtask_status srtask_partition(const srtask_raster* raster, double k, int min_size, int32_t* labels, size_t n,
                               int* count) {
  return guarded([&] {
    need(raster, "raster");
    need(labels, "labels");
    srtask::require(n == raster->r.plane_size(), ErrorKind::Usage, "buffer size must equal width * height");
    const srtask::Partition p = srtask::unsupervised_segment(raster->r, {k, min_size});
    std::copy(p.labels.data.begin(), p.labels.data.end(), labels);
    if (count) *count = p.count;
  });
}

// ---------------------------------------------------------------------- SR

srtask_status srtask_sr_model_load(const char* path, srtask_sr_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new srtask_sr_model{srtask::load_sr_model(path)};
  });
}

void srtask_sr_model_free(srtask_sr_model* model) { delete model; }

srtask_status srtask_sr_model_scale(const srtask_sr_model* model, int* scale) {
  return guarded([&] {
    need(model, "model");
    need(scale, "scale");
    *scale = model->m.config().scale;
  });
}

srtask_status srtask_sr_infer(const srtask_sr_model* model, const srtask_raster* lr, srtask_raster** out) {
  return guarded([&] {
    need(model, "model");
    need(lr, "lr");
    need(out, "out");
    *out = nullptr;
    *out = wrap(srtask::sr_infer(model->m, lr->r));
  });
}

// ----------------------------------------------------------------- commands

srtask_status srtask_run_command(const char* command, const char* request_json, char** result) {
  return guarded([&] {
    need(command, "command");
    need(result, "result");
    *result = nullptr;
    const std::string r = srtask::pipeline::run_command(command, request_json ? request_json : "");
    char* s = static_cast<char*>(std::malloc(r.size() + 1));
    if (!s) throw std::bad_alloc();
    std::memcpy(s, r.c_str(), r.size() + 1);
    *result = s;
  });
}

void srtask_string_free(char* s) { std::free(s); }

}  // extern "C"
