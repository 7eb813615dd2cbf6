/* SPDX-License-Identifier: Apache-2.0 */
#ifndef SRTASK_H
#define SRTASK_H

/*
 * C interface to the srtask library. Objects are opaque handles created by
 * *_load / *_create functions and released with the matching *_free. Every
 * function returns a status; on failure srtask_last_error() describes the
 * cause (per thread, valid until the next failing call on that thread).
 *
 * Pixel buffers are band-major: band 0 rows, then band 1 rows, and so on.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SRTASK_API __declspec(dllexport)
#else
#define SRTASK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum srtask_status {
  SRTASK_OK = 0,
  SRTASK_ERR_USAGE = 1,    /* bad arguments or configuration */
  SRTASK_ERR_DATA = 2,     /* malformed or inconsistent input data */
  SRTASK_ERR_IO = 3,       /* filesystem or subprocess failure */
  SRTASK_ERR_CONTRACT = 4, /* an external task broke its output contract */
  SRTASK_ERR_NUMERIC = 5,  /* divergence or non-finite values */
  SRTASK_ERR_INTERNAL = 6
} srtask_status;

typedef struct srtask_raster srtask_raster;
typedef struct srtask_scene srtask_scene;
typedef struct srtask_task_model srtask_task_model;
typedef struct srtask_sr_model srtask_sr_model;

SRTASK_API const char* srtask_version(void);
SRTASK_API const char* srtask_last_error(void);
SRTASK_API const char* srtask_status_name(srtask_status status);

/* Log lines go to stderr, as plain text or (json != 0) one JSON object per
 * line. min_level: 0 debug, 1 info, 2 warn, 3 error. */
SRTASK_API srtask_status srtask_set_log(int json, int min_level);

/* ---- rasters */
SRTASK_API srtask_status srtask_raster_create(int width, int height, int n_bands, const char* const* band_names,
                                              double gsd, const double* pixels, srtask_raster** out);
SRTASK_API srtask_status srtask_raster_load(const char* path, srtask_raster** out);
SRTASK_API srtask_status srtask_raster_save(const srtask_raster* raster, const char* path);
SRTASK_API void srtask_raster_free(srtask_raster* raster);
SRTASK_API srtask_status srtask_raster_info(const srtask_raster* raster, int* width, int* height, int* n_bands,
                                            double* gsd);
/* The returned string lives as long as the raster. */
SRTASK_API srtask_status srtask_raster_band_name(const srtask_raster* raster, int band, const char** name);
/* n must equal width * height * n_bands. */
SRTASK_API srtask_status srtask_raster_pixels(const srtask_raster* raster, double* dst, size_t n);

/* Keys cubic (a = -0.5) resize. */
SRTASK_API srtask_status srtask_bicubic(const srtask_raster* raster, int width, int height, srtask_raster** out);
/* Area-average resize. */
SRTASK_API srtask_status srtask_area_resize(const srtask_raster* raster, int width, int height, srtask_raster** out);

/* ---- scenes */
SRTASK_API srtask_status srtask_scene_load(const char* root, const char* id, srtask_scene** out);
SRTASK_API void srtask_scene_free(srtask_scene* scene);
SRTASK_API srtask_status srtask_scene_info(const srtask_scene* scene, int* scale, int* n_lr);
SRTASK_API srtask_status srtask_scene_hr(const srtask_scene* scene, srtask_raster** out);
SRTASK_API srtask_status srtask_scene_lr(const srtask_scene* scene, int index, srtask_raster** out);

/* ---- task models and built-in tasks */
SRTASK_API srtask_status srtask_task_model_load(const char* descriptor, srtask_task_model** out);
SRTASK_API srtask_status srtask_task_model_save(const srtask_task_model* model, const char* descriptor);
SRTASK_API void srtask_task_model_free(srtask_task_model* model);

/* mode: "sample_wise" (exactly one image) or "dataset_wise". */
SRTASK_API srtask_status srtask_adapt(const srtask_task_model* model, const char* mode,
                                      const srtask_raster* const* images, size_t n_images, srtask_task_model** out);

/* prob and mask hold width * height values of the input raster; either may be NULL. */
SRTASK_API srtask_status srtask_segment(const srtask_task_model* model, const srtask_raster* raster, double* prob,
                                        uint8_t* mask, size_t n);

/* xys receives up to capacity triples (x, y, score), strongest first. */
SRTASK_API srtask_status srtask_keypoints(const srtask_raster* raster, int n_requested, double* xys, size_t capacity,
                                          int* count);

/* labels holds width * height values; count receives the number of regions. */
SRTASK_API srtask_status srtask_partition(const srtask_raster* raster, double k, int min_size, int32_t* labels,
                                          size_t n, int* count);

/* ---- super-resolution */
SRTASK_API srtask_status srtask_sr_model_load(const char* path, srtask_sr_model** out);
SRTASK_API void srtask_sr_model_free(srtask_sr_model* model);
SRTASK_API srtask_status srtask_sr_model_scale(const srtask_sr_model* model, int* scale);
SRTASK_API srtask_status srtask_sr_infer(const srtask_sr_model* model, const srtask_raster* lr, srtask_raster** out);

/* ---- pipeline commands
 * command: synth | train-task | adapt | eval | verdict | train-sr | report.
 * request: JSON object with "out", "config", "seed" and command arguments.
 * On success *result is a JSON summary to be released with srtask_string_free. */
SRTASK_API srtask_status srtask_run_command(const char* command, const char* request_json, char** result);
SRTASK_API void srtask_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* SRTASK_H */
