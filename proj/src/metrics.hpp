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

#ifndef SMOKEDET_METRICS_HPP_
#define SMOKEDET_METRICS_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "assign.hpp"

namespace smokedet::metrics {

struct Detection {
  std::string image_id;
  std::array<double, 4> box{};
  double score = 0;
};

struct ImageMeta {
  std::string video_id;
  std::int64_t frame_index = 0;
  bool is_positive = false;
  std::optional<std::int64_t> fire_start_index;
};

struct EvalSet {
  std::vector<Detection> detections;
  std::map<std::string, std::vector<GtBox>> ground_truth;
  std::map<std::string, ImageMeta> image_meta;

  /// Throws when a detection references an unknown image or a box is malformed.
  void validate() const;
};

using Curve = std::vector<std::pair<double, double>>;

struct ApResult {
  double ap = 0;
  Curve pr;  // (recall, precision) after each ranked detection
  std::int64_t true_positives = 0;
  std::int64_t iou_evaluations = 0;
};

/// Raw all-point AP: detections ranked by score (ties: image_id, then box),
/// each greedily matched to the highest-IoU unmatched GT of its image with
/// IoU >= iou_thresh. AP = sum over true positives of precision / #GT.
ApResult ap_at_iou(const EvalSet& set, double iou_thresh = 0.1);

enum class Level { kImage, kVideo };

/// Max detection score per image (0 without detections), or per video as the
/// max over its frames' image scores. Every id in image_meta is present.
std::map<std::string, double> aggregate_scores(const EvalSet& set, Level level);

/// Mean over all (pos, neg) pairs of 1 if pos > neg, 0.5 on a tie,
/// computed in O(n log n) with mid-ranks. Throws if either side is empty.
double mann_whitney_auc(const std::vector<double>& pos, const std::vector<double>& neg);

struct RocPr {
  Curve roc;  // (fpr, tpr) from (0,0) through every distinct threshold
  Curve pr;   // (recall, precision) at every distinct threshold
  double roc_area = 0;  // trapezoidal
};

RocPr roc_pr_curves(const std::vector<double>& pos, const std::vector<double>& neg);

struct Classification {
  double acc = 0, f1 = 0, precision = 0, recall = 0;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Predicted positive iff score >= threshold.
Classification classification_metrics(const std::vector<double>& pos,
                                       const std::vector<double>& neg, double threshold = 0.5);

struct TimeToDetection {
  std::optional<double> mean_minutes;  // empty when no video was detected
  double detection_rate = 0;
  std::int64_t positive_videos = 0;
  std::int64_t detected_videos = 0;
};

/// Positive videos contain at least one positive frame and must carry
/// fire_start_index. Never-detected videos are excluded from the mean.
TimeToDetection time_to_detection(const EvalSet& set, double threshold,
                                  double frame_interval_minutes = 1.0);

struct EvalOptions {
  bool bbox = true;
  bool image = true;
  bool video = true;
  double iou_thresh = 0.1;
  double threshold = 0.5;
  double frame_interval_minutes = 1.0;
};

/// Metric keys of summary.csv, in file order.
inline const std::vector<std::string> kSummaryKeys{
    "bbox_ap01", "image_auc", "video_auc", "acc", "f1", "precision", "recall", "ttd",
    "detection_rate"};

struct EvalReport {
  std::map<std::string, std::optional<double>> values;  // keyed by kSummaryKeys
  std::map<std::string, Curve> curves;                  // bbox_pr, image_pr, image_roc, ...
  std::int64_t iou_evaluations = 0;  // zero when box matching was skipped
};

EvalReport evaluate(const EvalSet& set, const EvalOptions& opt);

/// Writes summary.csv, curve_<name>.csv and optionally curve_<name>.svg.
void write_report(const EvalReport& report, const std::string& dir, bool svg);

std::string format_value(const std::optional<double>& v);

/// 800x600 polyline plot with labeled axes.
std::string curve_svg(const Curve& curve, const std::string& title, const std::string& x_label,
                      const std::string& y_label);

}  // namespace smokedet::metrics

#endif  // SMOKEDET_METRICS_HPP_
