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

#include "ccpe.hpp"
#include "doctest.h"
#include "ops.hpp"
#include "oracles.hpp"

using namespace smokedet;
using oracle::random_tensor;
using oracle::values;

namespace {

ContrastConfig small_config(std::vector<int> h, std::vector<int> v, bool norm = true) {
  ContrastConfig c;
  c.strides_h = std::move(h);
  c.strides_v = std::move(v);
  c.final_norm = norm;
  return c;
}

void fill(ParameterStore<double>& store, const std::string& prefix, double value) {
  for (auto& p : store.params()) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) {
      for (auto& v : p.tensor.mutable_data()) v = value;
    }
  }
}

}  // namespace

TEST_SUITE("ccpe") {

TEST_CASE("parameter counts of the default stride set") {
  ContrastConfig cfg;
  CHECK(ccpe_param_count(cfg) == 57952);
  CHECK(vanilla_patch_embed_param_count(3, 96) == 4896);
  CHECK(ccpe_param_count(cfg) - vanilla_patch_embed_param_count(3, 96) == 53056);

  // The module allocates exactly the analytic count.
  Rng rng(0);
  ParameterStore<float> store;
  Ccpe<float> m(cfg, 640, 640, store, rng);
  CHECK(store.count() == 57952);
  ParameterStore<float> plain;
  PatchEmbed<float> pe(3, 96, 4, plain, rng);
  CHECK(plain.count() == 4896);
}

TEST_CASE("output shape is B x H/4 x W/4 x 96") {
  Rng rng(1);
  ParameterStore<double> store;
  Ccpe<double> m(small_config({1, 2, 4, 8}, {1, 2, 4, 8}), 128, 128, store, rng);
  CHECK(m.embed(random_tensor({2, 128, 96, 3}, rng)).shape() == Shape{2, 32, 24, 96});

  ContrastConfig t = small_config({1, 2, 4, 8}, {1, 2, 4, 8});
  t.in_channels = 6;
  ParameterStore<double> ts;
  Ccpe<double> temporal(t, 64, 64, ts, rng);
  CHECK(temporal.embed(random_tensor({1, 64, 64, 6}, rng)).shape() == Shape{1, 16, 16, 96});
  CHECK_THROWS(temporal.embed(random_tensor({1, 64, 62, 6}, rng)));
  CHECK_THROWS(temporal.embed(random_tensor({1, 64, 64, 3}, rng)));
}

TEST_CASE("construction rejects unsupported inputs and strides reaching the extent") {
  Rng rng(0);
  ParameterStore<double> store;
  CHECK_THROWS_AS(Ccpe<double>(small_config({1, 8}, {1}), 32, 32, store, rng), std::invalid_argument);
  CHECK_THROWS_AS(Ccpe<double>(small_config({1}, {1, 2, 9}), 32, 32, store, rng), std::invalid_argument);
  CHECK_THROWS_AS(Ccpe<double>(ContrastConfig{}, 128, 128, store, rng), std::invalid_argument);
  CHECK_THROWS_AS(Ccpe<double>(small_config({1}, {1}), 30, 32, store, rng), std::invalid_argument);
  ContrastConfig bad = small_config({1}, {1});
  bad.in_channels = 4;
  CHECK_THROWS_AS(Ccpe<double>(bad, 32, 32, store, rng), std::invalid_argument);
}

TEST_CASE("contrast masks vanish on constant input") {
  Rng rng(2);
  ParameterStore<double> store;
  Ccpe<double> m(small_config({1, 2, 3}, {1, 2, 3}), 32, 32, store, rng);
  auto f = m.patch(Tensor<double>::full({1, 32, 32, 3}, 0.37));
  for (std::size_t i = 0; i < 3; ++i) {
    const int s = m.config().strides_h[i];
    auto mask = ops::conv2d(contrast_difference(f, ops::kAxisWidth, s), m.branch_h().masks[i].w,
                            m.branch_h().masks[i].b, 1, 1);
    for (double v : values(mask)) CHECK(v == 0.0);
  }
  // The vertical masks see F^H; feed a constant map directly.
  auto fh = Tensor<double>::full({1, 8, 8, 48}, -1.25);
  for (std::size_t i = 0; i < 3; ++i) {
    auto mask = ops::conv2d(contrast_difference(fh, ops::kAxisHeight, m.config().strides_v[i]),
                            m.branch_v().masks[i].w, m.branch_v().masks[i].b, 1, 1);
    for (double v : values(mask)) CHECK(v == 0.0);
  }
}

TEST_CASE("period-4 columns give a zero stride-4 difference") {
  Rng rng(3);
  std::vector<double> v(1 * 3 * 12 * 2);
  std::vector<double> column(4 * 3 * 2);
  for (auto& c : column) c = rng.uniform(-1, 1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 12; ++j)
      for (int k = 0; k < 2; ++k) v[std::size_t((i * 12 + j) * 2 + k)] = column[std::size_t(((j % 4) * 3 + i) * 2 + k)];
  auto f = Tensor<double>::from_data({1, 3, 12, 2}, v);
  for (double d : values(contrast_difference(f, ops::kAxisWidth, 4))) CHECK(d == 0.0);
  for (double d : values(contrast_difference(f, ops::kAxisWidth, 8))) CHECK(d == 0.0);
  bool nonzero = false;
  for (double d : values(contrast_difference(f, ops::kAxisWidth, 1))) nonzero = nonzero || d != 0.0;
  CHECK(nonzero);
  // A full-extent row shift is the identity.
  for (double d : values(contrast_difference(f, ops::kAxisHeight, 3))) CHECK(d == 0.0);
}

TEST_CASE("vectorized embedding equals the scalar-loop transcription") {
  Rng rng(4);
  const std::vector<Shape> inputs{{1, 32, 32, 3}, {2, 32, 32, 3}, {1, 16, 24, 3}, {2, 24, 32, 3}};
  for (const auto& s : inputs) {
    for (bool norm : {false, true}) {
      ParameterStore<double> store;
      Ccpe<double> m(small_config({1, 2, 3}, {1, 2}, norm), s[1], s[2], store, rng);
      for (auto& p : store.params()) {
        for (auto& v : p.tensor.mutable_data()) v = rng.uniform(-0.5, 0.5);
      }
      auto x = random_tensor(s, rng);
      std::vector<double> g, b;
      if (norm) {
        g = values(store.get("ccpe.norm.gamma"));
        b = values(store.get("ccpe.norm.beta"));
      }
      auto ref = oracle::ccpe_reference(m, x, g, b);
      auto out = m.embed(x);
      CHECK(out.dim(3) == ref.c);
      CHECK(oracle::max_abs_diff(values(out), ref.v) <= 1e-12);
      auto fh = m.horizontal_contrast(m.patch(x));
      auto ref_fh = oracle::contrast_branch(oracle::as_map(m.patch(x)), m.branch_h(),
                                            m.config().strides_h, true);
      CHECK(oracle::max_abs_diff(values(fh), ref_fh.v) <= 1e-12);
      auto ref_fv = oracle::contrast_branch(oracle::as_map(fh), m.branch_v(), m.config().strides_v, false);
      CHECK(oracle::max_abs_diff(values(m.vertical_contrast(fh)), ref_fv.v) <= 1e-12);
    }
  }
}

TEST_CASE("zero network outputs zero") {
  Rng rng(5);
  ParameterStore<double> store;
  Ccpe<double> m(small_config({1, 2}, {1, 3}, false), 32, 32, store, rng);
  fill(store, "ccpe.", 0.0);
  for (double v : values(m.embed(random_tensor({2, 32, 32, 3}, rng)))) CHECK(v == 0.0);
}

TEST_CASE("with the contrast branches zeroed the second half ignores the input") {
  Rng rng(6);
  ParameterStore<double> store;
  Ccpe<double> m(small_config({1, 2}, {1, 3}, false), 16, 16, store, rng);
  fill(store, "ccpe.h.", 0.0);
  fill(store, "ccpe.v.", 0.0);
  auto x = random_tensor({1, 16, 16, 3}, rng, 0, 1, true);
  auto out = m.embed(x);
  ops::sum(ops::slice(out, 3, 48, 48)).backward();
  REQUIRE(x.has_grad());
  for (double g : x.grad()) CHECK(g == 0.0);
  x.zero_grad();
  auto out2 = m.embed(x);
  ops::sum(ops::slice(out2, 3, 0, 48)).backward();
  double total = 0;
  for (double g : x.grad()) total += std::abs(g);
  CHECK(total > 0);
}

TEST_CASE("cost relative to the plain patch embedding stays bounded") {
  ContrastConfig cfg;
  const double ratio = ccpe_flops(cfg, 640, 640) / vanilla_patch_embed_flops(3, 96, 640, 640);
  CHECK(ratio > 1);
  CHECK(ratio <= 15);
}

}  // TEST_SUITE
