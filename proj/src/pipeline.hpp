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

#ifndef SMOKEDET_PIPELINE_HPP_
#define SMOKEDET_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace smokedet {

struct StepLog {
  std::int64_t step = 0;
  double total = 0, conf = 0, cls = 0, box = 0;
  std::int64_t p_batch = 0, n_neg1 = 0, n_neg2 = 0;
};

struct TrainResult {
  std::int64_t start_step = 0;  // nonzero when resumed
  std::vector<StepLog> log;     // steps run by this call
};

/// Indices of the batch used at `step`: consecutive slices of per-epoch
/// permutations, so any step can be reproduced without replaying earlier ones.
std::vector<std::size_t> batch_indices(std::size_t n, std::int64_t batch_size,
                                       std::uint64_t seed, std::int64_t step);

/// Learning rate at `step`: linear warmup, then cosine decay over the
/// remaining steps when enabled.
double learning_rate_at(const TrainSettings& train, std::int64_t step);

/// Trains on `ds` and writes checkpoint.json/.bin, train_log.csv and config.txt
/// under out_dir. With `resume`, continues from out_dir's checkpoint. Divergence
/// raises NumericError naming the step.
TrainResult train_detector(const RunConfig& cfg, const Dataset& ds,
                           const std::filesystem::path& out_dir, bool resume,
                           const std::function<void(const StepLog&)>& on_step = {});

/// A detector of either precision together with the config it was built from.
struct LoadedModel {
  RunConfig config;
  std::int64_t step = 0;
  std::variant<std::unique_ptr<Detector<float>>, std::unique_ptr<Detector<double>>> detector;

  std::int64_t param_count() const;
  std::int64_t embed_param_count() const;
};

LoadedModel build_model(const RunConfig& cfg);
LoadedModel load_model(const std::filesystem::path& checkpoint);

struct EvalRequest {
  metrics::EvalOptions options;
  int threads = 1;
  std::int64_t batch_size = 8;
};

/// Detections in original image coordinates for every record, in record order.
std::vector<metrics::Detection> run_inference(const LoadedModel& model, const Dataset& ds,
                                              int threads, std::int64_t batch_size);

metrics::EvalSet make_eval_set(const Dataset& ds, std::vector<metrics::Detection> dets);

/// Inference + metrics. Writes detections.jsonl, summary.csv, curve files and
/// run.csv (sampling mode and parameter counts) into report_dir.
metrics::EvalReport evaluate_model(const LoadedModel& model, const Dataset& ds,
                                   const EvalRequest& req, const std::filesystem::path& report_dir,
                                   bool svg);

std::string detection_to_json_line(const metrics::Detection& d);

/// Worker count from CCPE_THREADS (default 1).
int threads_from_env();

}  // namespace smokedet

#endif  // SMOKEDET_PIPELINE_HPP_
