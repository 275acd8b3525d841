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

#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "model.hpp"

namespace smokedet::metrics {

void EvalSet::validate() const {
  for (const auto& d : detections) {
    if (!image_meta.count(d.image_id)) {
      throw std::invalid_argument("detection references unknown image '" + d.image_id + "'");
    }
    if (!(d.box[0] < d.box[2] && d.box[1] < d.box[3])) {
      throw std::invalid_argument("detection on '" + d.image_id + "' has a degenerate box");
    }
    if (!std::isfinite(d.score)) {
      throw std::invalid_argument("detection on '" + d.image_id + "' has a non-finite score");
    }
  }
}

ApResult ap_at_iou(const EvalSet& set, double iou_thresh) {
  ApResult r;
  std::int64_t n_gt = 0;
  for (const auto& [id, boxes] : set.ground_truth) n_gt += static_cast<std::int64_t>(boxes.size());

  std::vector<std::size_t> order(set.detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = set.detections[a];
    const auto& db = set.detections[b];
    if (da.score != db.score) return da.score > db.score;
    if (da.image_id != db.image_id) return da.image_id < db.image_id;
    if (da.box != db.box) return da.box < db.box;
    return a < b;
  });

  std::map<std::string, std::vector<bool>> matched;
  for (const auto& [id, boxes] : set.ground_truth) matched[id].assign(boxes.size(), false);

  std::int64_t tp = 0, fp = 0;
  double ap = 0;
  for (std::size_t idx : order) {
    const auto& d = set.detections[idx];
    int best = -1;
    double best_iou = iou_thresh;
    auto git = set.ground_truth.find(d.image_id);
    if (git != set.ground_truth.end()) {
      auto& used = matched[d.image_id];
      for (std::size_t g = 0; g < git->second.size(); ++g) {
        ++r.iou_evaluations;
        if (used[g]) continue;
        const double iou = box_iou(d.box, git->second[g].as_array());
        if (iou >= best_iou && (best < 0 || iou > best_iou)) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    }
    if (best >= 0) {
      ++tp;
    } else {
      ++fp;
    }
    const double precision = double(tp) / double(tp + fp);
    const double recall = n_gt > 0 ? double(tp) / double(n_gt) : 0.0;
    if (best >= 0 && n_gt > 0) ap += precision / double(n_gt);
    r.pr.emplace_back(recall, precision);
  }
  r.ap = ap;
  r.true_positives = tp;
  return r;
}

std::map<std::string, double> aggregate_scores(const EvalSet& set, Level level) {
  std::map<std::string, double> image;
  for (const auto& [id, meta] : set.image_meta) image[id] = 0.0;
  for (const auto& d : set.detections) {
    auto it = image.find(d.image_id);
    if (it == image.end()) {
      throw std::invalid_argument("detection references unknown image '" + d.image_id + "'");
    }
    it->second = std::max(it->second, d.score);
  }
  if (level == Level::kImage) return image;
  std::map<std::string, double> video;
  for (const auto& [id, meta] : set.image_meta) {
    auto [it, inserted] = video.emplace(meta.video_id, image[id]);
    if (!inserted) it->second = std::max(it->second, image[id]);
  }
  return video;
}

double mann_whitney_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) {
    throw std::invalid_argument("mann_whitney_auc: undefined with an empty class");
  }
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.push_back({s, true});
  for (double s : neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Ranks doubled so mid-ranks stay integral.
  std::int64_t rank2_pos = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const auto mid2 = static_cast<std::int64_t>(i + 1 + j);  // 2 * average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].positive) rank2_pos += mid2;
    }
    i = j;
  }
  const auto np = static_cast<std::int64_t>(pos.size());
  const auto nn = static_cast<std::int64_t>(neg.size());
  const std::int64_t u2 = rank2_pos - np * (np + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

RocPr roc_pr_curves(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) {
    throw std::invalid_argument("roc_pr_curves: both classes must be non-empty");
  }
  std::vector<std::pair<double, bool>> all;
  for (double s : pos) all.emplace_back(s, true);
  for (double s : neg) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  const double np = double(pos.size()), nn = double(neg.size());
  RocPr out;
  out.roc.emplace_back(0.0, 0.0);
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? tp : fp)++;
      ++j;
    }
    const auto [px, py] = out.roc.back();
    const double fpr = double(fp) / nn, tpr = double(tp) / np;
    out.roc_area += (fpr - px) * (tpr + py) * 0.5;
    out.roc.emplace_back(fpr, tpr);
    out.pr.emplace_back(tpr, double(tp) / double(tp + fp));
    i = j;
  }
  return out;
}

Classification classification_metrics(const std::vector<double>& pos,
                                       const std::vector<double>& neg, double threshold) {
  Classification c;
  for (double s : pos) (s >= threshold ? c.tp : c.fn)++;
  for (double s : neg) (s >= threshold ? c.fp : c.tn)++;
  const auto total = c.tp + c.fp + c.tn + c.fn;
  c.precision = c.tp + c.fp > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  c.recall = c.tp + c.fn > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
  c.acc = total > 0 ? double(c.tp + c.tn) / double(total) : 0.0;
  return c;
}

TimeToDetection time_to_detection(const EvalSet& set, double threshold,
                                  double frame_interval_minutes) {
  const auto image = aggregate_scores(set, Level::kImage);
  struct Video {
    bool positive = false;
    std::optional<std::int64_t> fire_start;
    std::vector<std::pair<std::int64_t, double>> frames;
  };
  std::map<std::string, Video> videos;
  for (const auto& [id, meta] : set.image_meta) {
    auto& v = videos[meta.video_id];
    v.positive = v.positive || meta.is_positive;
    if (meta.fire_start_index) v.fire_start = meta.fire_start_index;
    v.frames.emplace_back(meta.frame_index, image.at(id));
  }
  TimeToDetection r;
  double total = 0;
  for (auto& [vid, v] : videos) {
    if (!v.positive) continue;
    if (!v.fire_start) {
      throw std::invalid_argument("positive video '" + vid + "' lacks fire_start_index");
    }
    ++r.positive_videos;
    std::sort(v.frames.begin(), v.frames.end());
    for (const auto& [frame, score] : v.frames) {
      if (frame >= *v.fire_start && score >= threshold) {
        total += frame_interval_minutes * double(frame - *v.fire_start);
        ++r.detected_videos;
        break;
      }
    }
  }
  if (r.detected_videos > 0) r.mean_minutes = total / double(r.detected_videos);
  r.detection_rate =
      r.positive_videos > 0 ? double(r.detected_videos) / double(r.positive_videos) : 0.0;
  return r;
}

namespace {

void split_by_label(const std::map<std::string, double>& scores,
                    const std::map<std::string, bool>& labels, std::vector<double>& pos,
                    std::vector<double>& neg) {
  for (const auto& [id, s] : scores) (labels.at(id) ? pos : neg).push_back(s);
}

}  // namespace

EvalReport evaluate(const EvalSet& set, const EvalOptions& opt) {
  set.validate();
  EvalReport rep;
  for (const auto& k : kSummaryKeys) rep.values[k] = std::nullopt;
  if (opt.bbox) {
    auto ap = ap_at_iou(set, opt.iou_thresh);
    rep.values["bbox_ap01"] = ap.ap;
    rep.curves["bbox_pr"] = ap.pr;
    rep.iou_evaluations = ap.iou_evaluations;
  }
  if (opt.image) {
    std::map<std::string, bool> labels;
    for (const auto& [id, m] : set.image_meta) labels[id] = m.is_positive;
    std::vector<double> pos, neg;
    split_by_label(aggregate_scores(set, Level::kImage), labels, pos, neg);
    if (!pos.empty() && !neg.empty()) {
      rep.values["image_auc"] = mann_whitney_auc(pos, neg);
      auto c = roc_pr_curves(pos, neg);
      rep.curves["image_roc"] = c.roc;
      rep.curves["image_pr"] = c.pr;
    }
    if (!pos.empty() || !neg.empty()) {
      auto cm = classification_metrics(pos, neg, opt.threshold);
      rep.values["acc"] = cm.acc;
      rep.values["f1"] = cm.f1;
      rep.values["precision"] = cm.precision;
      rep.values["recall"] = cm.recall;
    }
  }
  if (opt.video) {
    std::map<std::string, bool> labels;
    for (const auto& [id, m] : set.image_meta) labels[m.video_id] = labels[m.video_id] || m.is_positive;
    std::vector<double> pos, neg;
    split_by_label(aggregate_scores(set, Level::kVideo), labels, pos, neg);
    if (!pos.empty() && !neg.empty()) {
      rep.values["video_auc"] = mann_whitney_auc(pos, neg);
      auto c = roc_pr_curves(pos, neg);
      rep.curves["video_roc"] = c.roc;
      rep.curves["video_pr"] = c.pr;
    }
    auto ttd = time_to_detection(set, opt.threshold, opt.frame_interval_minutes);
    rep.values["ttd"] = ttd.mean_minutes;
    if (ttd.positive_videos > 0) rep.values["detection_rate"] = ttd.detection_rate;
  }
  return rep;
}

std::string format_value(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", *v);
  return buf;
}

std::string curve_svg(const Curve& curve, const std::string& title, const std::string& x_label,
                      const std::string& y_label) {
  constexpr double W = 800, H = 600, L = 80, R = 40, T = 50, B = 70;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" "
        "viewBox=\"0 0 800 600\">\n"
     << "<rect width=\"800\" height=\"600\" fill=\"white\"/>\n"
     << "<text x=\"400\" y=\"30\" text-anchor=\"middle\" font-size=\"18\">" << title << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 10; t += 2) {
    const double f = t / 10.0;
    const double x = L + f * (W - L - R), y = H - B - f * (H - T - B);
    os << "<text x=\"" << x << "\" y=\"" << H - B + 20 << "\" text-anchor=\"middle\" "
       << "font-size=\"12\">" << f << "</text>\n"
       << "<text x=\"" << L - 10 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\" "
       << "font-size=\"12\">" << f << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 20
     << "\" text-anchor=\"middle\" font-size=\"14\">" << x_label << "</text>\n"
     << "<text x=\"20\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"14\" "
     << "transform=\"rotate(-90 20 " << (T + H - B) / 2 << ")\">" << y_label << "</text>\n"
     << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (const auto& [cx, cy] : curve) {
    os << L + std::clamp(cx, 0.0, 1.0) * (W - L - R) << ','
       << H - B - std::clamp(cy, 0.0, 1.0) * (H - T - B) << ' ';
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

void write_report(const EvalReport& report, const std::string& dir, bool svg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "summary.csv", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write summary.csv in " + dir);
    out << "metric,value\n";
    for (const auto& k : kSummaryKeys) out << k << ',' << format_value(report.values.at(k)) << '\n';
  }
  for (const auto& [name, curve] : report.curves) {
    std::ofstream out(fs::path(dir) / ("curve_" + name + ".csv"), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write curve file in " + dir);
    out << "x,y\n";
    for (const auto& [x, y] : curve) {
      out << format_value(x) << ',' << format_value(y) << '\n';
    }
    if (svg) {
      const bool roc = name.find("roc") != std::string::npos;
      std::ofstream s(fs::path(dir) / ("curve_" + name + ".svg"), std::ios::trunc);
      s << curve_svg(curve, name, roc ? "false positive rate" : "recall",
                     roc ? "true positive rate" : "precision");
    }
  }
}

}  // namespace smokedet::metrics
