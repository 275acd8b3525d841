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

#ifndef SMOKEDET_CONFIG_HPP_
#define SMOKEDET_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "assign.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace smokedet {

// Raised for malformed config text, unknown keys or out-of-range values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainSettings {
  double lr = 0.00125;  // 0.01 at batch 64, scaled linearly to batch 8
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::int64_t batch_size = 8;
  std::int64_t steps = 300;
  std::int64_t warmup_steps = 30;  // linear lr ramp over the first steps
  bool cosine = true;  // cosine decay to zero after warmup
  std::uint64_t seed = 0;
  int input_size = 128;
  DType dtype = DType::kF32;
  bool flip = true;
  std::int64_t checkpoint_every = 0;  // 0: only at the end

  bool operator==(const TrainSettings&) const = default;
};

struct EvalSettings {
  double iou_thresh = 0.1;
  double score_threshold = 0.5;
  double nms_iou = 0.65;
  double score_floor = 1e-3;
  double frame_interval_minutes = 1.0;

  bool operator==(const EvalSettings&) const = default;
};

/// Every hyperparameter of a run as one flat `section.key = value` set.
struct RunConfig {
  int channels = 24;
  int window = 4;
  std::vector<int> heads{2, 4, 8};
  int mlp_ratio = 2;
  TemporalMode temporal_mode = TemporalMode::kSingle;
  bool use_ccpe = true;
  // Empty: the full stride set, trimmed to strides below the feature extent.
  std::optional<std::vector<int>> strides_h, strides_v;
  int mask_channels = 1;
  bool ccpe_norm = true;
  SamplingMode sampling_mode = SamplingMode::kSnsm;
  double alpha1 = 10;
  double alpha2 = 190;
  std::int64_t floor = 16;
  double ratio = 200;
  TrainSettings train;
  EvalSettings eval;
  std::string data_path, out_path;

  bool operator==(const RunConfig&) const = default;

  ModelConfig model_config() const;
  SamplingConfig sampling_config() const;
  /// Throws ConfigError on any inconsistent setting.
  void validate() const;
};

/// Strides of `set` below `extent` (the stride-4 feature map size).
std::vector<int> auto_strides(const std::vector<int>& set, std::int64_t extent);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(to_string(c)) == c.
std::string config_to_string(const RunConfig& c);
void save_config(const std::filesystem::path& path, const RunConfig& c);

/// Applies one `key = value` assignment.
void set_config_value(RunConfig& c, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& c, const std::string& key);
const std::vector<std::string>& config_keys();

}  // namespace smokedet

#endif  // SMOKEDET_CONFIG_HPP_
