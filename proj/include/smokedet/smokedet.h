/* Copyright 2026 The smokedet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef SMOKEDET_SMOKEDET_H_
#define SMOKEDET_SMOKEDET_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SMOKEDET_API __declspec(dllexport)
#else
#define SMOKEDET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum smokedet_status {
  SMOKEDET_OK = 0,
  SMOKEDET_INVALID_ARGUMENT = 1, /* bad config, flag or input value */
  SMOKEDET_IO_ERROR = 2,
  SMOKEDET_NUMERIC_ERROR = 3,    /* NaN/Inf during training or inference */
  SMOKEDET_RUNTIME_ERROR = 4
} smokedet_status;

/* Message of the last failed call on this thread; never NULL. */
SMOKEDET_API const char* smokedet_last_error(void);
SMOKEDET_API const char* smokedet_version(void);
SMOKEDET_API void smokedet_string_free(char* s);

/* ---- run configuration ---- */

typedef struct smokedet_config smokedet_config;

SMOKEDET_API smokedet_status smokedet_config_create(smokedet_config** out);
SMOKEDET_API smokedet_status smokedet_config_load(const char* path, smokedet_config** out);
SMOKEDET_API smokedet_status smokedet_config_set(smokedet_config* cfg, const char* key,
                                                 const char* value);
/* Caller frees *value with smokedet_string_free. */
SMOKEDET_API smokedet_status smokedet_config_get(const smokedet_config* cfg, const char* key,
                                                 char** value);
SMOKEDET_API smokedet_status smokedet_config_validate(const smokedet_config* cfg);
SMOKEDET_API smokedet_status smokedet_config_save(const smokedet_config* cfg, const char* path);
SMOKEDET_API void smokedet_config_destroy(smokedet_config* cfg);

/* ---- synthetic data ---- */

typedef struct smokedet_gendata_options {
  const char* out_dir;
  int64_t num_images;
  double positive_fraction; /* [0, 1] */
  uint64_t seed;
  int32_t image_size;       /* square side in pixels */
} smokedet_gendata_options;

/* digest receives 16 hex chars plus NUL. */
SMOKEDET_API smokedet_status smokedet_gendata(const smokedet_gendata_options* opt,
                                              char digest[17], int64_t* num_positive);

/* ---- training ---- */

typedef struct smokedet_step_info {
  int64_t step;
  double total, l_conf, l_cls, l_box;
  int64_t p_batch, n_neg1, n_neg2;
} smokedet_step_info;

typedef void (*smokedet_step_callback)(const smokedet_step_info* info, void* user);

typedef struct smokedet_train_summary {
  int64_t start_step;
  int64_t steps_run;
  double initial_loss; /* first step of this call */
  double final_loss;
} smokedet_train_summary;

SMOKEDET_API smokedet_status smokedet_train(const smokedet_config* cfg, const char* data_dir,
                                            const char* out_dir, int resume,
                                            smokedet_step_callback callback, void* user,
                                            smokedet_train_summary* summary);

/* ---- model + evaluation ---- */

typedef struct smokedet_model smokedet_model;

SMOKEDET_API smokedet_status smokedet_model_load(const char* checkpoint, smokedet_model** out);
SMOKEDET_API int64_t smokedet_model_param_count(const smokedet_model* model);
SMOKEDET_API int64_t smokedet_model_embed_param_count(const smokedet_model* model);
SMOKEDET_API void smokedet_model_destroy(smokedet_model* model);

enum {
  SMOKEDET_LEVEL_BBOX = 1,
  SMOKEDET_LEVEL_IMAGE = 2,
  SMOKEDET_LEVEL_VIDEO = 4,
  SMOKEDET_LEVEL_ALL = 7
};

typedef struct smokedet_eval_options {
  uint32_t levels;   /* SMOKEDET_LEVEL_* bits */
  int use_threshold; /* nonzero: use `threshold` instead of the config value */
  double threshold;
  int svg;           /* also write curve_*.svg */
  int threads;       /* <= 0: CCPE_THREADS from the environment */
} smokedet_eval_options;

typedef struct smokedet_eval_result {
  int64_t num_detections;
  int64_t iou_evaluations; /* zero when box matching was skipped */
} smokedet_eval_result;

SMOKEDET_API smokedet_status smokedet_eval(const smokedet_model* model, const char* data_dir,
                                           const char* report_dir,
                                           const smokedet_eval_options* opt,
                                           smokedet_eval_result* result);

/* ---- gradient check suite ---- */

typedef struct smokedet_gradcheck smokedet_gradcheck;

SMOKEDET_API smokedet_status smokedet_gradcheck_run(uint64_t seed, double tolerance,
                                                    int inject_conv_fault,
                                                    smokedet_gradcheck** out);
SMOKEDET_API size_t smokedet_gradcheck_count(const smokedet_gradcheck* g);
SMOKEDET_API const char* smokedet_gradcheck_name(const smokedet_gradcheck* g, size_t i);
SMOKEDET_API double smokedet_gradcheck_error(const smokedet_gradcheck* g, size_t i);
SMOKEDET_API int64_t smokedet_gradcheck_coordinates(const smokedet_gradcheck* g, size_t i);
SMOKEDET_API int smokedet_gradcheck_passed(const smokedet_gradcheck* g, size_t i);
SMOKEDET_API void smokedet_gradcheck_destroy(smokedet_gradcheck* g);

/* ---- cross-run comparison ---- */

/* format is "csv" or "svg"; caller frees *text with smokedet_string_free. */
SMOKEDET_API smokedet_status smokedet_report(const char* const* dirs, size_t num_dirs,
                                             const char* format, char** text);

#ifdef __cplusplus
}
#endif

#endif /* SMOKEDET_SMOKEDET_H_ */
