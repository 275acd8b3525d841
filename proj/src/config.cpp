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

#include "config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace smokedet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

template <typename N>
std::string number_text(N v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string int_list_text(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::optional<std::vector<int>> parse_strides(const std::string& key, const std::string& v) {
  if (v == "auto") return std::nullopt;
  return parse_int_list(key, v);
}

std::string strides_text(const std::optional<std::vector<int>>& v) {
  return v ? int_list_text(*v) : "auto";
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SMOKEDET_NUM_FIELD(key, member, type)                                      \
  {                                                                                \
    key, Field {                                                                   \
      [](RunConfig& c, const std::string& k, const std::string& v) {               \
        c.member = parse_number<type>(k, v);                                       \
      },                                                                           \
          [](const RunConfig& c) { return number_text<type>(c.member); }           \
    }                                                                              \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      SMOKEDET_NUM_FIELD("model.channels", channels, int),
      SMOKEDET_NUM_FIELD("model.window", window, int),
      {"model.heads",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.heads = parse_int_list(k, v);
        },
        [](const RunConfig& c) { return int_list_text(c.heads); }}},
      SMOKEDET_NUM_FIELD("model.mlp_ratio", mlp_ratio, int),
      {"model.temporal_mode",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "single") {
            c.temporal_mode = TemporalMode::kSingle;
          } else if (v == "concat2") {
            c.temporal_mode = TemporalMode::kConcat2;
          } else {
            throw ConfigError("config key '" + k + "': expected single or concat2");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.temporal_mode == TemporalMode::kConcat2 ? "concat2" : "single");
        }}},
      {"model.use_ccpe",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.use_ccpe = parse_bool(k, v);
        },
        [](const RunConfig& c) { return bool_text(c.use_ccpe); }}},
      {"ccpe.strides_h",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.strides_h = parse_strides(k, v);
        },
        [](const RunConfig& c) { return strides_text(c.strides_h); }}},
      {"ccpe.strides_v",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.strides_v = parse_strides(k, v);
        },
        [](const RunConfig& c) { return strides_text(c.strides_v); }}},
      SMOKEDET_NUM_FIELD("ccpe.mask_channels", mask_channels, int),
      {"ccpe.norm",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.ccpe_norm = parse_bool(k, v);
        },
        [](const RunConfig& c) { return bool_text(c.ccpe_norm); }}},
      {"sampling.mode",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.sampling_mode = parse_sampling_mode(v);
          } catch (const std::exception& e) {
            throw ConfigError("config key '" + k + "': " + e.what());
          }
        },
        [](const RunConfig& c) { return std::string(sampling_mode_name(c.sampling_mode)); }}},
      SMOKEDET_NUM_FIELD("sampling.alpha1", alpha1, double),
      SMOKEDET_NUM_FIELD("sampling.alpha2", alpha2, double),
      SMOKEDET_NUM_FIELD("sampling.floor", floor, std::int64_t),
      SMOKEDET_NUM_FIELD("sampling.ratio", ratio, double),
      SMOKEDET_NUM_FIELD("train.lr", train.lr, double),
      SMOKEDET_NUM_FIELD("train.momentum", train.momentum, double),
      SMOKEDET_NUM_FIELD("train.weight_decay", train.weight_decay, double),
      SMOKEDET_NUM_FIELD("train.batch_size", train.batch_size, std::int64_t),
      SMOKEDET_NUM_FIELD("train.steps", train.steps, std::int64_t),
      SMOKEDET_NUM_FIELD("train.warmup_steps", train.warmup_steps, std::int64_t),
      {"train.lr_schedule",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "cosine") {
            c.train.cosine = true;
          } else if (v == "constant") {
            c.train.cosine = false;
          } else {
            throw ConfigError("config key '" + k + "': expected cosine or constant");
          }
        },
        [](const RunConfig& c) { return std::string(c.train.cosine ? "cosine" : "constant"); }}},
      SMOKEDET_NUM_FIELD("train.seed", train.seed, std::uint64_t),
      SMOKEDET_NUM_FIELD("train.input_size", train.input_size, int),
      {"train.dtype",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "f32") {
            c.train.dtype = DType::kF32;
          } else if (v == "f64") {
            c.train.dtype = DType::kF64;
          } else {
            throw ConfigError("config key '" + k + "': expected f32 or f64");
          }
        },
        [](const RunConfig& c) { return std::string(dtype_name(c.train.dtype)); }}},
      {"train.augment",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "flip") {
            c.train.flip = true;
          } else if (v == "none") {
            c.train.flip = false;
          } else {
            throw ConfigError("config key '" + k + "': expected flip or none");
          }
        },
        [](const RunConfig& c) { return std::string(c.train.flip ? "flip" : "none"); }}},
      SMOKEDET_NUM_FIELD("train.checkpoint_every", train.checkpoint_every, std::int64_t),
      SMOKEDET_NUM_FIELD("eval.iou_thresh", eval.iou_thresh, double),
      SMOKEDET_NUM_FIELD("eval.score_threshold", eval.score_threshold, double),
      SMOKEDET_NUM_FIELD("eval.nms_iou", eval.nms_iou, double),
      SMOKEDET_NUM_FIELD("eval.score_floor", eval.score_floor, double),
      SMOKEDET_NUM_FIELD("eval.frame_interval_minutes", eval.frame_interval_minutes, double),
      {"paths.data",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.data_path = v; },
        [](const RunConfig& c) { return c.data_path; }}},
      {"paths.out",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.out_path = v; },
        [](const RunConfig& c) { return c.out_path; }}},
  };
  return table;
}

#undef SMOKEDET_NUM_FIELD

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<int> auto_strides(const std::vector<int>& set, std::int64_t extent) {
  std::vector<int> out;
  for (int s : set) {
    if (s < extent) out.push_back(s);
  }
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.channels = channels;
  m.window_size = window;
  m.heads = heads;
  m.mlp_ratio = mlp_ratio;
  m.temporal_mode = temporal_mode;
  m.use_ccpe = use_ccpe;
  m.input_size = train.input_size;
  m.ccpe.in_channels = m.input_channels();
  m.ccpe.mask_channels = mask_channels;
  m.ccpe.final_norm = ccpe_norm;
  const std::int64_t extent = train.input_size / m.ccpe.patch_stride;
  m.ccpe.strides_h = strides_h ? *strides_h : auto_strides(kFullContrastStrides, extent);
  m.ccpe.strides_v = strides_v ? *strides_v : auto_strides(kFullContrastStrides, extent);
  return m;
}

SamplingConfig RunConfig::sampling_config() const {
  return {sampling_mode, alpha1, alpha2, floor, ratio};
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(channels >= 1, "model.channels must be >= 1");
  require(window >= 1, "model.window must be >= 1");
  require(mlp_ratio >= 1, "model.mlp_ratio must be >= 1");
  require(mask_channels >= 1, "ccpe.mask_channels must be >= 1");
  require(alpha1 >= 0 && alpha2 >= 0, "sampling alphas must be >= 0");
  require(floor >= 0, "sampling.floor must be >= 0");
  require(ratio >= 0, "sampling.ratio must be >= 0");
  require(train.lr > 0, "train.lr must be > 0");
  require(train.momentum >= 0 && train.momentum < 1, "train.momentum must be in [0, 1)");
  require(train.weight_decay >= 0, "train.weight_decay must be >= 0");
  require(train.batch_size >= 1, "train.batch_size must be >= 1");
  require(train.steps >= 0, "train.steps must be >= 0");
  require(train.warmup_steps >= 0, "train.warmup_steps must be >= 0");
  require(train.checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
  require(eval.iou_thresh > 0 && eval.iou_thresh <= 1, "eval.iou_thresh must be in (0, 1]");
  require(eval.nms_iou > 0 && eval.nms_iou <= 1, "eval.nms_iou must be in (0, 1]");
  require(eval.score_floor >= 0 && eval.score_floor < 1, "eval.score_floor must be in [0, 1)");
  require(eval.frame_interval_minutes > 0, "eval.frame_interval_minutes must be > 0");
  try {
    model_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  field(key).set(c, key, value);
}

std::string get_config_value(const RunConfig& c, const std::string& key) {
  return field(key).get(c);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::stringstream in(text);
  std::string line;
  int line_no = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (seen.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "' (first on line " + std::to_string(seen[key]) + ")");
    }
    seen[key] = line_no;
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_string(const RunConfig& c) {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(c) + "\n";
  return out;
}

void save_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << config_to_string(c);
}

}  // namespace smokedet
