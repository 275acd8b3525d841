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

#ifndef SMOKEDET_ASSIGN_HPP_
#define SMOKEDET_ASSIGN_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "model.hpp"
#include "rng.hpp"

namespace smokedet {

struct GtBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int cls = 0;

  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }
};

struct ScaleGrid {
  std::int64_t h = 0, w = 0;
  int stride = 8;
};

/// Per-image location indexing across all scales: scale 0 cells first, row-major.
struct LocationLayout {
  std::vector<ScaleGrid> scales;

  static LocationLayout for_input(std::int64_t input_h, std::int64_t input_w);
  std::int64_t per_image() const;
  std::int64_t offset(std::size_t scale) const;
  ops::CellAnchor anchor(std::int64_t location) const;
};

struct Targets {
  LocationLayout layout;
  std::int64_t batch = 0;
  std::vector<std::uint8_t> pos;      // [B*L]
  std::vector<std::array<double, 4>> box;  // valid where pos
  std::vector<int> cls;               // valid where pos
  std::vector<std::int64_t> per_image_pos;
};

/// 3x3 center-cell positives per GT and scale, clipped at borders. On overlap the
/// GT whose center is nearest the cell center wins (lower index on ties).
Targets assign_positives(const std::vector<std::vector<GtBox>>& gts, const LocationLayout& layout);

enum class SamplingMode { kNone, kRandom, kOhem, kSnsm };

const char* sampling_mode_name(SamplingMode m);
SamplingMode parse_sampling_mode(const std::string& s);

struct SamplingConfig {
  SamplingMode mode = SamplingMode::kSnsm;
  double alpha1 = 10;   // random negatives per positive, on positive images
  double alpha2 = 190;  // hard negatives per positive, joint over negative images
  std::int64_t floor = 16;  // per negative image when the batch has no positives
  double ratio = 200;   // Random / OHEM baselines
};

struct MaskSet {
  LocationLayout layout;
  std::int64_t batch = 0;
  std::vector<std::uint8_t> pos, init_neg, neg1, neg2;  // [B*L]
  std::vector<bool> image_positive;
  std::int64_t num_pos_images = 0;  // B_p
  std::int64_t num_neg_images = 0;  // B_n

  std::int64_t count(const std::vector<std::uint8_t>& m) const;
  std::int64_t count_on_image(const std::vector<std::uint8_t>& m, std::int64_t image) const;
  /// Per-scale view [B,h,w] of one of the masks.
  std::vector<std::uint8_t> scale_view(const std::vector<std::uint8_t>& m, std::size_t scale) const;
  /// Throws std::logic_error when a structural invariant is broken.
  void validate() const;
};

/// Initializes pos/init_neg and image bookkeeping; neg1/neg2 empty.
MaskSet base_masks(const Targets& targets, const std::vector<bool>& image_positive);

std::int64_t scaled_count(double alpha, std::int64_t n);

MaskSet build_snsm_masks(const Targets& targets, const std::vector<bool>& image_positive,
                         const std::vector<double>& conf_scores, const SamplingConfig& cfg,
                         Rng& rng);
MaskSet sample_random(const Targets& targets, const std::vector<bool>& image_positive,
                      const SamplingConfig& cfg, Rng& rng);
MaskSet sample_ohem(const Targets& targets, const std::vector<bool>& image_positive,
                    const std::vector<double>& conf_scores, const SamplingConfig& cfg);
MaskSet sample_all(const Targets& targets, const std::vector<bool>& image_positive);

/// Dispatches on cfg.mode.
MaskSet build_masks(const Targets& targets, const std::vector<bool>& image_positive,
                    const std::vector<double>& conf_scores, const SamplingConfig& cfg, Rng& rng);

/// Top-k locations of `candidates` by descending score; ties by ascending index.
std::vector<std::int64_t> top_k_by_score(std::vector<std::int64_t> candidates,
                                         const std::vector<double>& scores, std::int64_t k);

inline constexpr double kBoxLossWeight = 5.0;

template <typename T>
struct LossTerms {
  Tensor<T> total;
  // Components already divided by max(num_pos, 1).
  double conf = 0, cls = 0, box = 0;
  std::int64_t num_pos = 0;
};

/// Flattened [B*L] confidence logits across scales (plain values).
template <typename T>
std::vector<double> flatten_conf(const std::vector<HeadOutput<T>>& head);

template <typename T>
LossTerms<T> compute_losses(const std::vector<HeadOutput<T>>& head, const Targets& targets,
                            const MaskSet& masks);

}  // namespace smokedet

#endif  // SMOKEDET_ASSIGN_HPP_
