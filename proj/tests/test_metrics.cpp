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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "metrics.hpp"
#include "oracles.hpp"

using namespace smokedet;
using namespace smokedet::metrics;

namespace {

EvalSet one_gt_set() {
  EvalSet s;
  s.image_meta["a"] = {"v", 0, true, 0};
  s.ground_truth["a"] = {{0, 0, 10, 10, 0}};
  return s;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("rank AUC on the worked example") {
  CHECK(mann_whitney_auc({0.9, 0.4}, {0.5, 0.4, 0.1}) == 0.75);
  CHECK(mann_whitney_auc({0.9, 0.8}, {0.1, 0.2, 0.3}) == 1.0);
  CHECK(mann_whitney_auc({0.3, 0.5, 0.5}, {0.5, 0.3, 0.5}) == 0.5);
  CHECK_THROWS(mann_whitney_auc({}, {0.1}));
  CHECK_THROWS(mann_whitney_auc({0.1}, {}));
}

TEST_CASE("rank AUC equals the pairwise count") {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    auto pos = oracle::tied_scores(1 + rng.uniform_int(60), rng);
    auto neg = oracle::tied_scores(1 + rng.uniform_int(60), rng);
    CHECK(std::abs(mann_whitney_auc(pos, neg) - oracle::pairwise_auc(pos, neg)) <= 1e-12);
  }
}

TEST_CASE("AUC invariances") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto pos = oracle::tied_scores(1 + rng.uniform_int(40), rng);
    auto neg = oracle::tied_scores(1 + rng.uniform_int(40), rng);
    const double a = mann_whitney_auc(pos, neg);
    CHECK(a + mann_whitney_auc(neg, pos) == 1.0);
    auto warp = [](std::vector<double> v) {
      for (auto& x : v) x = std::exp(3 * x) - 7;
      return v;
    };
    CHECK(mann_whitney_auc(warp(pos), warp(neg)) == a);
  }
}

TEST_CASE("ROC curves") {
  auto perfect = roc_pr_curves({0.9, 0.8}, {0.2, 0.1});
  CHECK(std::find(perfect.roc.begin(), perfect.roc.end(), std::make_pair(0.0, 1.0)) != perfect.roc.end());
  CHECK(perfect.roc_area == 1.0);
  auto flat = roc_pr_curves({0.5, 0.5}, {0.5});
  CHECK(flat.roc == Curve{{0, 0}, {1, 1}});
  CHECK(flat.roc_area == 0.5);

  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto pos = oracle::tied_scores(500, rng);
    auto neg = oracle::tied_scores(500, rng);
    auto r = roc_pr_curves(pos, neg);
    CHECK(std::abs(r.roc_area - mann_whitney_auc(pos, neg)) <= 1e-9);
    for (std::size_t i = 1; i < r.roc.size(); ++i) {
      CHECK(r.roc[i].first >= r.roc[i - 1].first);
      CHECK(r.roc[i].second >= r.roc[i - 1].second);
    }
    CHECK(r.roc.back() == std::make_pair(1.0, 1.0));
  }
}

TEST_CASE("classification at a threshold") {
  auto p = classification_metrics({0.9, 0.8}, {0.1, 0.2});
  CHECK(p.acc == 1.0);
  CHECK(p.f1 == 1.0);
  CHECK(p.precision == 1.0);
  CHECK(p.recall == 1.0);
  auto z = classification_metrics({0, 0}, {0, 0, 0});
  CHECK(z.recall == 0.0);
  CHECK(z.precision == 0.0);
  CHECK(z.f1 == 0.0);
  CHECK(z.acc == doctest::Approx(0.6));
  auto h = classification_metrics({0.9, 0.2}, {0.6, 0.1});
  CHECK(h.tp == 1);
  CHECK(h.fp == 1);
  CHECK(h.fn == 1);
  CHECK(h.tn == 1);
  CHECK(h.precision == 0.5);
  CHECK(h.recall == 0.5);
  CHECK(h.f1 == 0.5);
  CHECK(h.acc == 0.5);
  // The threshold itself counts as positive.
  CHECK(classification_metrics({0.5}, {0.49}).tp == 1);
}

TEST_CASE("max-score aggregation") {
  EvalSet s;
  s.image_meta["f0"] = {"vid", 0, false, std::nullopt};
  s.image_meta["f1"] = {"vid", 1, false, std::nullopt};
  s.image_meta["f2"] = {"vid", 2, false, std::nullopt};
  s.detections = {{"f1", {0, 0, 1, 1}, 0.3}, {"f1", {0, 0, 2, 2}, 0.7}, {"f2", {0, 0, 1, 1}, 0.4}};
  auto img = aggregate_scores(s, Level::kImage);
  CHECK(img["f0"] == 0.0);
  CHECK(img["f1"] == 0.7);
  CHECK(aggregate_scores(s, Level::kVideo)["vid"] == 0.7);
}

TEST_CASE("average precision examples") {
  auto s = one_gt_set();
  s.detections = {{"a", {0, 0, 10, 20}, 0.9}, {"a", {9, 9, 30, 30}, 0.8}};
  auto r = ap_at_iou(s, 0.1);
  CHECK(r.ap == 1.0);
  CHECK(r.pr == Curve{{1, 1}, {1, 0.5}});

  auto empty = one_gt_set();
  CHECK(ap_at_iou(empty).ap == 0.0);

  auto twice = one_gt_set();
  twice.detections = {{"a", {0, 0, 10, 10}, 0.9}, {"a", {1, 1, 10, 10}, 0.8}};
  auto t = ap_at_iou(twice);
  CHECK(t.true_positives == 1);
  CHECK(t.pr.back() == std::make_pair(1.0, 0.5));
}

TEST_CASE("average precision equals the exhaustive oracle") {
  Rng rng(13);
  int with_ties = 0;
  for (int trial = 0; trial < 150; ++trial) {
    auto s = oracle::random_ap_instance(rng);
    const auto o = oracle::exhaustive_ap(s, 0.1);
    const double ap = ap_at_iou(s, 0.1).ap;
    CHECK(std::abs(ap - o.canonical) <= 1e-12);
    CHECK(ap >= o.lowest - 1e-12);
    CHECK(ap <= o.highest + 1e-12);
    with_ties += o.orderings > 1;
  }
  CHECK(with_ties > 20);
}

TEST_CASE("time to detection") {
  auto video = [](const std::string& vid, int frames, std::optional<std::int64_t> start) {
    EvalSet s;
    for (int f = 0; f < frames; ++f) {
      const std::string id = vid + "_" + std::to_string(f);
      s.image_meta[id] = {vid, f, start && f >= *start, start};
    }
    return s;
  };
  auto s = video("v", 8, 3);
  s.detections = {{"v_5", {0, 0, 1, 1}, 0.9}, {"v_6", {0, 0, 1, 1}, 0.95}, {"v_1", {0, 0, 1, 1}, 0.99}};
  auto r = time_to_detection(s, 0.5, 1.0);
  REQUIRE(r.mean_minutes);
  CHECK(*r.mean_minutes == 2.0);
  CHECK(r.detection_rate == 1.0);
  CHECK(*time_to_detection(s, 0.5, 2.5).mean_minutes == 5.0);

  auto at_start = video("w", 5, 3);
  at_start.detections = {{"w_3", {0, 0, 1, 1}, 0.6}};
  CHECK(*time_to_detection(at_start, 0.5).mean_minutes == 0.0);

  // One detected and one missed video: the miss only lowers the rate.
  auto both = video("a", 6, 2);
  auto missed = video("b", 6, 1);
  both.image_meta.insert(missed.image_meta.begin(), missed.image_meta.end());
  both.detections = {{"a_4", {0, 0, 1, 1}, 0.7}};
  auto m = time_to_detection(both, 0.5);
  CHECK(*m.mean_minutes == 2.0);
  CHECK(m.detection_rate == 0.5);
  CHECK(m.positive_videos == 2);

  auto none = video("n", 4, 0);
  CHECK_FALSE(time_to_detection(none, 0.5).mean_minutes.has_value());

  auto broken = video("x", 3, std::nullopt);
  broken.image_meta["x_1"].is_positive = true;
  CHECK_THROWS(time_to_detection(broken, 0.5));
}

TEST_CASE("report values stay in range and undefined metrics are NA") {
  Rng rng(14);
  EvalSet s;
  for (int v = 0; v < 4; ++v) {
    for (int f = 0; f < 5; ++f) {
      const std::string id = "v" + std::to_string(v) + "f" + std::to_string(f);
      const bool pos = v < 2 && f >= 2;
      s.image_meta[id] = {"v" + std::to_string(v), f, pos, v < 2 ? std::optional<std::int64_t>(2) : std::nullopt};
      if (pos) s.ground_truth[id] = {{10, 10, 40, 40, 0}};
      if (rng.bernoulli(0.6)) s.detections.push_back({id, {12, 8, 44, 41}, rng.uniform()});
    }
  }
  auto rep = evaluate(s, EvalOptions{});
  for (const auto& key : kSummaryKeys) {
    REQUIRE(rep.values.count(key));
    const auto& v = rep.values.at(key);
    if (!v) continue;
    CHECK(*v >= 0);
    if (key != "ttd") CHECK(*v <= 1);
  }
  CHECK(rep.iou_evaluations > 0);

  EvalOptions image_only;
  image_only.bbox = false;
  image_only.video = false;
  auto ri = evaluate(s, image_only);
  CHECK(ri.iou_evaluations == 0);
  CHECK_FALSE(ri.values.at("bbox_ap01").has_value());
  CHECK(format_value(std::nullopt) == "NA");

  EvalSet one_class;
  one_class.image_meta["a"] = {"v", 0, false, std::nullopt};
  CHECK_FALSE(evaluate(one_class, EvalOptions{}).values.at("image_auc").has_value());
}

TEST_CASE("report files") {
  auto s = one_gt_set();
  s.image_meta["b"] = {"w", 0, false, std::nullopt};
  s.detections = {{"a", {0, 0, 10, 10}, 0.9}, {"b", {0, 0, 5, 5}, 0.3}};
  const auto dir = std::filesystem::temp_directory_path() / "smokedet_report_test";
  std::filesystem::remove_all(dir);
  write_report(evaluate(s, EvalOptions{}), dir.string(), true);
  std::ifstream in(dir / "summary.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "metric,value");
  std::vector<std::string> keys;
  while (std::getline(in, line)) keys.push_back(line.substr(0, line.find(',')));
  CHECK(keys == kSummaryKeys);
  std::ifstream curve(dir / "curve_image_roc.csv");
  std::getline(curve, line);
  CHECK(line == "x,y");
  std::ifstream svg(dir / "curve_image_roc.svg");
  std::stringstream ss;
  ss << svg.rdbuf();
  CHECK(ss.str().find("width=\"800\"") != std::string::npos);
  CHECK(ss.str().find("<polyline") != std::string::npos);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
