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

#ifndef SMOKEDET_DATA_HPP_
#define SMOKEDET_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "assign.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace smokedet {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

struct ImageRecord {
  std::string image_path;  // relative to the dataset root
  int width = 0;
  int height = 0;
  std::vector<GtBox> boxes;
  std::string video_id;
  std::int64_t frame_index = 0;
  bool is_positive = false;
  std::optional<std::int64_t> fire_start_index;
  std::shared_ptr<const Image> pixels;  // optional inline pixels

  std::string image_id() const { return image_path; }
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ImageRecord> records;

  /// Inline pixels if present, otherwise read from root / image_path.
  Image load_pixels(const ImageRecord& r) const;
};

struct Range {
  double lo = 0, hi = 0;
};

struct SceneSpec {
  int image_size = 128;
  std::array<int, 2> plume_count{1, 2};
  Range plume_opacity{0.55, 0.85};
  Range plume_sigma{3.0, 7.0};
  bool background_gradient = true;
  bool background_noise = true;
  bool background_clutter = true;
  bool distractor_clouds = true;
  bool distractor_fog = true;
  bool distractor_bright = true;
  int video_length = 10;
  std::uint64_t seed = 0;
};

inline constexpr double kBoxAlphaThreshold = 0.05;

/// One plume as an anisotropic Gaussian mixture drifting upward.
struct Plume {
  struct Puff {
    double cx, cy, sx, sy, weight;
  };
  std::vector<Puff> puffs;
  double opacity = 0;
  std::array<double, 3> color{};

  double alpha(double x, double y) const;
};

/// Tight box of pixels where the plume's alpha exceeds kBoxAlphaThreshold, if any.
std::optional<GtBox> plume_box(const Plume& plume, int width, int height);

struct GeneratedDataset {
  std::vector<ImageRecord> records;
  std::string digest;  // FNV-1a 64 over annotations.jsonl then images in order
};

/// Renders n images into out_dir (images/*.ppm + annotations.jsonl). Exactly
/// round(n * positive_fraction) records are positive as long as plumes stay
/// above the box alpha threshold.
GeneratedDataset generate_synthetic_dataset(const SceneSpec& spec, std::int64_t n,
                                            double positive_fraction,
                                            const std::filesystem::path& out_dir);

std::string record_to_json_line(const ImageRecord& r);
/// Validated records; malformed lines raise std::runtime_error naming the line.
std::vector<ImageRecord> load_jsonl_dataset(const std::filesystem::path& path);
Dataset load_dataset_dir(const std::filesystem::path& dir);

std::string fnv1a_hex(const std::string& bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

struct Letterbox {
  double scale = 1;
  double pad_x = 0;
  double pad_y = 0;
  int content_w = 0;
  int content_h = 0;

  static Letterbox fit(int src_w, int src_h, int target);
  GtBox apply(const GtBox& b) const;
  GtBox invert(const GtBox& b) const;
  std::array<double, 4> invert(const std::array<double, 4>& b) const;
};

inline constexpr double kPadValue = 114.0 / 255.0;

/// Letterboxed [target,target,3] values in [0,1] (pad 114/255), bilinear resize.
std::vector<double> letterbox_pixels(const Image& img, const Letterbox& lb, int target);

GtBox flip_box(const GtBox& b, double width);

struct BatchOptions {
  int input_size = 128;
  bool flip = false;
  TemporalMode temporal_mode = TemporalMode::kSingle;
};

template <typename T>
struct Batch {
  Tensor<T> images;  // [B,S,S,3] or [B,S,S,6]
  std::vector<std::vector<GtBox>> gts;
  std::vector<bool> positive;
  std::vector<Letterbox> letterbox;
  std::vector<bool> flipped;
  std::vector<std::size_t> record_index;
};

/// Index of the frame stacked with `index` in concat2 mode: frame t-2 of the same
/// video, clamped at the video start (falls back to the nearest earlier frame
/// present, then to the frame itself).
std::size_t temporal_partner(const Dataset& ds, std::size_t index);

template <typename T>
Batch<T> make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                    const BatchOptions& opt, Rng& rng);

}  // namespace smokedet

#endif  // SMOKEDET_DATA_HPP_
