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

#include "smokedet/smokedet.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "grad_suite.hpp"
#include "pipeline.hpp"
#include "report.hpp"

struct smokedet_config {
  smokedet::RunConfig cfg;
};

struct smokedet_model {
  smokedet::LoadedModel model;
};

struct smokedet_gradcheck {
  std::vector<smokedet::GradCheckResult> results;
};

namespace {

thread_local std::string g_last_error;

smokedet_status fail(smokedet_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Maps the exception in flight to a status code.
smokedet_status translate() {
  try {
    throw;
  } catch (const smokedet::NumericError& e) {
    return fail(SMOKEDET_NUMERIC_ERROR, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(SMOKEDET_INVALID_ARGUMENT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(SMOKEDET_IO_ERROR, e.what());
  } catch (const std::exception& e) {
    return fail(SMOKEDET_RUNTIME_ERROR, e.what());
  } catch (...) {
    return fail(SMOKEDET_RUNTIME_ERROR, "unknown error");
  }
}

template <typename F>
smokedet_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return SMOKEDET_OK;
  } catch (...) {
    return translate();
  }
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define SMOKEDET_REQUIRE(cond, msg) \
  if (!(cond)) return fail(SMOKEDET_INVALID_ARGUMENT, msg)

}  // namespace

extern "C" {

const char* smokedet_last_error(void) { return g_last_error.c_str(); }

const char* smokedet_version(void) { return "0.1.0"; }

void smokedet_string_free(char* s) { delete[] s; }

smokedet_status smokedet_config_create(smokedet_config** out) {
  SMOKEDET_REQUIRE(out, "config_create: null output pointer");
  return guarded([&] { *out = new smokedet_config{}; });
}

smokedet_status smokedet_config_load(const char* path, smokedet_config** out) {
  SMOKEDET_REQUIRE(path && out, "config_load: null argument");
  return guarded([&] { *out = new smokedet_config{smokedet::load_config(path)}; });
}

smokedet_status smokedet_config_set(smokedet_config* cfg, const char* key, const char* value) {
  SMOKEDET_REQUIRE(cfg && key && value, "config_set: null argument");
  return guarded([&] { smokedet::set_config_value(cfg->cfg, key, value); });
}

smokedet_status smokedet_config_get(const smokedet_config* cfg, const char* key, char** value) {
  SMOKEDET_REQUIRE(cfg && key && value, "config_get: null argument");
  return guarded([&] { *value = copy_string(smokedet::get_config_value(cfg->cfg, key)); });
}

smokedet_status smokedet_config_validate(const smokedet_config* cfg) {
  SMOKEDET_REQUIRE(cfg, "config_validate: null config");
  return guarded([&] { cfg->cfg.validate(); });
}

smokedet_status smokedet_config_save(const smokedet_config* cfg, const char* path) {
  SMOKEDET_REQUIRE(cfg && path, "config_save: null argument");
  return guarded([&] { smokedet::save_config(path, cfg->cfg); });
}

void smokedet_config_destroy(smokedet_config* cfg) { delete cfg; }

smokedet_status smokedet_gendata(const smokedet_gendata_options* opt, char digest[17],
                                 int64_t* num_positive) {
  SMOKEDET_REQUIRE(opt && opt->out_dir, "gendata: null options or output dir");
  return guarded([&] {
    smokedet::SceneSpec spec;
    spec.seed = opt->seed;
    spec.image_size = opt->image_size;
    const auto ds = smokedet::generate_synthetic_dataset(spec, opt->num_images,
                                                         opt->positive_fraction, opt->out_dir);
    if (digest) std::snprintf(digest, 17, "%s", ds.digest.c_str());
    if (num_positive) {
      *num_positive = 0;
      for (const auto& r : ds.records) *num_positive += r.is_positive ? 1 : 0;
    }
  });
}

smokedet_status smokedet_train(const smokedet_config* cfg, const char* data_dir,
                               const char* out_dir, int resume, smokedet_step_callback callback,
                               void* user, smokedet_train_summary* summary) {
  SMOKEDET_REQUIRE(cfg && data_dir && out_dir, "train: null argument");
  return guarded([&] {
    const auto ds = smokedet::load_dataset_dir(data_dir);
    std::function<void(const smokedet::StepLog&)> hook;
    if (callback) {
      hook = [&](const smokedet::StepLog& s) {
        const smokedet_step_info info{s.step,    s.total,  s.conf,   s.cls,
                                      s.box,     s.p_batch, s.n_neg1, s.n_neg2};
        callback(&info, user);
      };
    }
    const auto r = smokedet::train_detector(cfg->cfg, ds, out_dir, resume != 0, hook);
    if (summary) {
      summary->start_step = r.start_step;
      summary->steps_run = static_cast<int64_t>(r.log.size());
      summary->initial_loss = r.log.empty() ? NAN : r.log.front().total;
      summary->final_loss = r.log.empty() ? NAN : r.log.back().total;
    }
  });
}

smokedet_status smokedet_model_load(const char* checkpoint, smokedet_model** out) {
  SMOKEDET_REQUIRE(checkpoint && out, "model_load: null argument");
  return guarded([&] { *out = new smokedet_model{smokedet::load_model(checkpoint)}; });
}

int64_t smokedet_model_param_count(const smokedet_model* model) {
  return model ? model->model.param_count() : -1;
}

int64_t smokedet_model_embed_param_count(const smokedet_model* model) {
  return model ? model->model.embed_param_count() : -1;
}

void smokedet_model_destroy(smokedet_model* model) { delete model; }

smokedet_status smokedet_eval(const smokedet_model* model, const char* data_dir,
                              const char* report_dir, const smokedet_eval_options* opt,
                              smokedet_eval_result* result) {
  SMOKEDET_REQUIRE(model && data_dir && report_dir && opt, "eval: null argument");
  SMOKEDET_REQUIRE((opt->levels & SMOKEDET_LEVEL_ALL) != 0 && (opt->levels & ~7u) == 0,
                   "eval: levels must be a nonempty combination of bbox/image/video");
  SMOKEDET_REQUIRE(!opt->use_threshold || (opt->threshold >= 0 && opt->threshold <= 1),
                   "eval: threshold must be in [0, 1]");
  return guarded([&] {
    const auto ds = smokedet::load_dataset_dir(data_dir);
    const auto& c = model->model.config;
    smokedet::EvalRequest req;
    req.options.bbox = opt->levels & SMOKEDET_LEVEL_BBOX;
    req.options.image = opt->levels & SMOKEDET_LEVEL_IMAGE;
    req.options.video = opt->levels & SMOKEDET_LEVEL_VIDEO;
    req.options.iou_thresh = c.eval.iou_thresh;
    req.options.threshold = opt->use_threshold ? opt->threshold : c.eval.score_threshold;
    req.options.frame_interval_minutes = c.eval.frame_interval_minutes;
    req.threads = opt->threads > 0 ? opt->threads : smokedet::threads_from_env();
    const auto report =
        smokedet::evaluate_model(model->model, ds, req, report_dir, opt->svg != 0);
    if (result) {
      result->iou_evaluations = report.iou_evaluations;
      result->num_detections = 0;
      // detections.jsonl holds one line per detection
      std::ifstream in(std::filesystem::path(report_dir) / "detections.jsonl");
      std::string line;
      while (std::getline(in, line)) result->num_detections += line.empty() ? 0 : 1;
    }
  });
}

smokedet_status smokedet_gradcheck_run(uint64_t seed, double tolerance, int inject_conv_fault,
                                       smokedet_gradcheck** out) {
  SMOKEDET_REQUIRE(out, "gradcheck: null output pointer");
  SMOKEDET_REQUIRE(tolerance > 0 && std::isfinite(tolerance), "gradcheck: tolerance must be > 0");
  return guarded([&] {
    smokedet::GradSuiteOptions o;
    o.seed = seed;
    o.tolerance = tolerance;
    o.inject_conv_fault = inject_conv_fault != 0;
    *out = new smokedet_gradcheck{smokedet::run_grad_suite(o)};
  });
}

size_t smokedet_gradcheck_count(const smokedet_gradcheck* g) { return g ? g->results.size() : 0; }

const char* smokedet_gradcheck_name(const smokedet_gradcheck* g, size_t i) {
  return g && i < g->results.size() ? g->results[i].name.c_str() : "";
}

double smokedet_gradcheck_error(const smokedet_gradcheck* g, size_t i) {
  return g && i < g->results.size() ? g->results[i].max_rel_error : NAN;
}

int64_t smokedet_gradcheck_coordinates(const smokedet_gradcheck* g, size_t i) {
  return g && i < g->results.size() ? g->results[i].coordinates : 0;
}

int smokedet_gradcheck_passed(const smokedet_gradcheck* g, size_t i) {
  return g && i < g->results.size() && g->results[i].passed ? 1 : 0;
}

void smokedet_gradcheck_destroy(smokedet_gradcheck* g) { delete g; }

smokedet_status smokedet_report(const char* const* dirs, size_t num_dirs, const char* format,
                                char** text) {
  SMOKEDET_REQUIRE(dirs && format && text, "report: null argument");
  const std::string fmt = format;
  SMOKEDET_REQUIRE(fmt == "csv" || fmt == "svg", "report: format must be csv or svg");
  return guarded([&] {
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < num_dirs; ++i) {
      if (!dirs[i]) throw std::invalid_argument("report: null run dir");
      paths.emplace_back(dirs[i]);
    }
    const auto table = smokedet::merge_reports(paths);
    *text = copy_string(fmt == "csv" ? smokedet::table_csv(table) : smokedet::table_svg(table));
  });
}

}  // extern "C"
