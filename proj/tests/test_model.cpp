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

#include "doctest.h"
#include "model.hpp"
#include "oracles.hpp"

using namespace smokedet;
using oracle::random_tensor;
using oracle::values;

namespace {

ModelConfig small_model(int input) {
  ModelConfig c;
  c.channels = 8;
  c.heads = {1, 2, 4};
  c.input_size = input;
  c.ccpe.strides_h = c.ccpe.strides_v = {1, 2, 4};
  return c;
}

void zero(Tensor<double>& t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("backbone emits three levels at strides 8, 16 and 32") {
  ModelConfig cfg;
  cfg.input_size = 640;
  Detector<double> det(cfg, 1);
  Rng rng(0);
  auto p = det.backbone(random_tensor({1, 160, 160, 96}, rng));
  CHECK(p.levels[0].shape() == Shape{1, 80, 80, 48});
  CHECK(p.levels[1].shape() == Shape{1, 40, 40, 96});
  CHECK(p.levels[2].shape() == Shape{1, 20, 20, 192});
}

TEST_CASE("batch axis and fused shapes are preserved") {
  Detector<double> det(small_model(64), 2);
  Rng rng(1);
  auto images = random_tensor({7, 64, 64, 3}, rng, 0, 1);
  auto p = det.backbone(det.embed(images));
  auto fused = det.fuse(p);
  for (int l = 0; l < 3; ++l) {
    CHECK(p.levels[std::size_t(l)].dim(0) == 7);
    CHECK(fused.levels[std::size_t(l)].shape() == p.levels[std::size_t(l)].shape());
  }
  auto head = det.head(fused);
  REQUIRE(head.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(head[l].conf.dim(1) == p.levels[l].dim(1));
    CHECK(head[l].conf.dim(2) == p.levels[l].dim(2));
    CHECK(head[l].cls.dim(3) == 1);
    CHECK(head[l].box.dim(3) == 4);
    CHECK(head[l].stride == kFeatureStrides[l]);
  }
}

TEST_CASE("same seed gives bit-identical forward passes") {
  Detector<float> a(small_model(64), 9), b(small_model(64), 9);
  Rng rng(3);
  std::vector<float> px(2 * 64 * 64 * 3);
  for (auto& v : px) v = float(rng.uniform());
  auto x = Tensor<float>::from_data({2, 64, 64, 3}, px);
  auto ha = a.forward(x), hb = b.forward(x);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(std::equal(ha[l].conf.data().begin(), ha[l].conf.data().end(), hb[l].conf.data().begin()));
    CHECK(std::equal(ha[l].box.data().begin(), ha[l].box.data().end(), hb[l].box.data().begin()));
  }
}

TEST_CASE("forward and decode stay finite on random images") {
  Detector<float> det(small_model(64), 4);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> px(64 * 64 * 3);
    const double scale = trial % 2 ? 1.0 : 20.0;
    for (auto& v : px) v = float(rng.uniform(0, scale));
    auto head = det.forward(Tensor<float>::from_data({1, 64, 64, 3}, px));
    auto dets = decode_boxes(head, DecodeOptions{0.0, 0.65, 100, 64, 64});
    for (const auto& d : dets[0]) {
      for (double v : d.box) REQUIRE(std::isfinite(v));
      REQUIRE(std::isfinite(d.score));
    }
  }
}

TEST_CASE("zero offsets decode to the cell centre with stride-sized boxes") {
  auto b = ops::decode_box(0, 0, 0, 0, {0, 0, 8});
  CHECK(b == std::array<double, 4>{0, 0, 8, 8});
  auto c = ops::decode_box(0, 0, 0, 0, {3, 2, 16});
  CHECK(c == std::array<double, 4>{48, 32, 64, 48});
  // Size logits are clamped so exp cannot overflow.
  auto big = ops::decode_box(0, 0, 1e6, -1e6, {0, 0, 8});
  CHECK(std::isfinite(big[2]));
  CHECK(big[3] > big[1]);
}

TEST_CASE("decode scores multiply both sigmoids and drop vanishing confidence") {
  auto make = [](std::int64_t h, double conf_at_origin) {
    HeadOutput<double> o;
    std::vector<double> conf(std::size_t(h * h), -40.0);
    conf[0] = conf_at_origin;
    o.conf = Tensor<double>::from_data({1, h, h, 1}, conf);
    o.cls = Tensor<double>::full({1, h, h, 1}, 0.0);
    o.box = Tensor<double>::zeros({1, h, h, 4});
    return o;
  };
  std::vector<HeadOutput<double>> head{make(4, 0.0), make(2, -1e3), make(1, -1e3)};
  head[1].stride = 16;
  head[2].stride = 32;
  auto dets = decode_boxes(head, DecodeOptions{0.1, 0.65, 100, 32, 32});
  REQUIRE(dets.size() == 1);
  REQUIRE(dets[0].size() == 1);
  CHECK(dets[0][0].score == doctest::Approx(0.25));
  CHECK(dets[0][0].box == std::array<double, 4>{0, 0, 8, 8});
}

TEST_CASE("nms keeps the higher of two identical boxes") {
  std::vector<Detection> d{{{10, 10, 50, 50}, 0.8}, {{10, 10, 50, 50}, 0.9}, {{100, 100, 120, 130}, 0.5}};
  auto kept = nms(d, 0.65);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].score == 0.5);
  // IoU exactly at the threshold is kept.
  std::vector<Detection> e{{{0, 0, 10, 10}, 0.9}, {{0, 0, 10, 20}, 0.8}};
  CHECK(nms(e, 0.5).size() == 2);
  CHECK(nms(e, 0.49).size() == 1);
}

TEST_CASE("every assigned box is representable by the head") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const double w = rng.uniform(2, 200), h = rng.uniform(2, 200);
    const double x = rng.uniform(0, 640 - w), y = rng.uniform(0, 640 - h);
    const std::array<double, 4> box{x, y, x + w, y + h};
    const int stride = kFeatureStrides[rng.uniform_int(3)];
    const double gx = std::floor((x + w / 2) / stride) + double(rng.uniform_int(3)) - 1;
    const double gy = std::floor((y + h / 2) / stride) + double(rng.uniform_int(3)) - 1;
    const ops::CellAnchor a{gx, gy, double(stride)};
    auto raw = encode_box(box, a);
    auto back = ops::decode_box(raw[0], raw[1], raw[2], raw[3], a);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(back[std::size_t(k)] - box[std::size_t(k)]) <= 1e-6);
  }
}

TEST_CASE("window attention") {
  Rng rng(8);
  ParameterStore<double> store;
  auto blk = make_attention_block(store, "blk", 24, 4, 4, 2, rng);
  Tensor<double> attn;
  auto x = random_tensor({1, 4, 4, 24}, rng);
  auto y = window_attention_block(x, blk, &attn);
  CHECK(y.shape() == x.shape());
  REQUIRE(attn.defined());
  const std::int64_t n = attn.dim(-1);
  CHECK(n == 16);
  auto a = values(attn);
  for (std::size_t r = 0; r < a.size() / std::size_t(n); ++r) {
    double s = 0;
    for (std::int64_t k = 0; k < n; ++k) s += a[r * std::size_t(n) + std::size_t(k)];
    CHECK(std::abs(s - 1) <= 1e-6);
  }
  // Padding path: 6x5 is not a multiple of the window.
  CHECK(window_attention_block(random_tensor({2, 6, 5, 24}, rng), blk).shape() == Shape{2, 6, 5, 24});

  zero(blk.proj.w);
  zero(blk.fc2.w);
  for (double v : values(window_attention_block(Tensor<double>::zeros({1, 8, 8, 24}), blk))) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("fusion of zero maps is zero and P4 reaches P2") {
  Detector<double> det(small_model(64), 5);
  const auto ch = det.config().stage_channels();
  FeatureMaps<double> p;
  p.levels[0] = Tensor<double>::zeros({1, 8, 8, ch[0]});
  p.levels[1] = Tensor<double>::zeros({1, 4, 4, ch[1]});
  p.levels[2] = Tensor<double>::zeros({1, 2, 2, ch[2]});
  for (const auto& l : det.fuse(p).levels) {
    for (double v : values(l)) CHECK(v == 0.0);
  }

  auto& f = det.fusion_params();
  for (auto* c : {&f.lateral4, &f.lateral3, &f.down2, &f.down3, &f.smooth[0], &f.smooth[1], &f.smooth[2]}) {
    zero(c->w);
    zero(c->b);
  }
  auto identity_like = [](ConvLayer<double>& c) {
    const auto k = c.w.dim(0), ci = c.w.dim(2), co = c.w.dim(3);
    auto w = c.w.mutable_data();
    const auto centre = (k / 2) * k + k / 2;
    for (std::int64_t i = 0; i < std::min(ci, co); ++i) w[std::size_t((centre * ci + i) * co + i)] = 1.0;
  };
  identity_like(f.lateral4);
  identity_like(f.lateral3);
  identity_like(f.smooth[0]);
  std::vector<double> p4(std::size_t(4 * ch[2]), 0.0);
  for (std::size_t c = 0; c < std::size_t(ch[2]); ++c) p4[c] = 1.0;  // top-left P4 cell only
  p.levels[2] = Tensor<double>::from_data({1, 2, 2, ch[2]}, p4);
  auto out = values(det.fuse(p).levels[0]);
  // P2 cells under the top-left P4 cell (4x4 block) carry it, the rest stay zero.
  for (std::int64_t i = 0; i < 8; ++i)
    for (std::int64_t j = 0; j < 8; ++j) {
      const double v = out[std::size_t((i * 8 + j) * ch[0])];
      if (i < 4 && j < 4) {
        CHECK(v > 0.5);
      } else {
        CHECK(v == 0.0);
      }
    }
}

TEST_CASE("conf and class biases start at the score prior") {
  Detector<double> det(small_model(64), 6);
  for (auto& h : det.head_params()) {
    for (double v : values(h.conf.b)) CHECK(v == kScorePriorLogit);
    for (double v : values(h.cls.b)) CHECK(v == kScorePriorLogit);
  }
  CHECK(1.0 / (1.0 + std::exp(-kScorePriorLogit)) == doctest::Approx(0.01).epsilon(1e-12));
}

}  // TEST_SUITE
