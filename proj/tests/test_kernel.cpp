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
#include <limits>

#include "checkpoint.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "ops.hpp"
#include "oracles.hpp"
#include "params.hpp"

using namespace smokedet;
using oracle::random_tensor;
using oracle::values;

namespace {

Tensor<double> t64(Shape s, std::vector<double> v, bool grad = false) {
  return Tensor<double>::from_data(std::move(s), std::move(v), grad);
}

}  // namespace

TEST_SUITE("kernel") {

TEST_CASE("conv2d on a constant 3x3 image counts overlapping taps") {
  auto x = Tensor<double>::full({1, 3, 3, 1}, 1.0);
  auto w = Tensor<double>::full({3, 3, 1, 1}, 1.0);
  auto y = ops::conv2d(x, w, Tensor<double>::zeros({1}), 1, 1);
  CHECK(values(y) == std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4});
}

TEST_CASE("1x1 identity kernel returns the input") {
  Rng rng(3);
  auto x = random_tensor({2, 5, 4, 3}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[std::size_t(i * 3 + i)] = 1.0;
  auto y = ops::conv2d(x, t64({1, 1, 3, 3}, eye), Tensor<double>{}, 1, 0);
  CHECK(values(y) == values(x));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(11);
  struct Case {
    Shape x;
    int k, cout, stride, pad;
  };
  const std::vector<Case> cases{{{1, 9, 9, 4}, 3, 5, 1, 1},   {{2, 9, 9, 4}, 3, 2, 2, 1},
                                {{2, 8, 8, 3}, 4, 6, 4, 0},   {{1, 7, 5, 2}, 1, 3, 1, 0},
                                {{2, 9, 7, 4}, 5, 2, 1, 2},   {{1, 6, 9, 1}, 3, 1, 2, 0}};
  for (const auto& c : cases) {
    auto x = random_tensor(c.x, rng);
    auto w = random_tensor({c.k, c.k, c.x[3], c.cout}, rng);
    auto b = random_tensor({c.cout}, rng);
    auto y = ops::conv2d(x, w, b, c.stride, c.pad);
    auto ref = oracle::conv_with(oracle::as_map(x), w, b, c.stride, c.pad);
    CHECK(y.dim(1) == ref.h);
    CHECK(y.dim(2) == ref.w);
    CHECK(oracle::max_abs_diff(values(y), ref.v) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects mismatched channels naming both shapes") {
  auto x = Tensor<double>::zeros({1, 4, 4, 3});
  auto w = Tensor<double>::zeros({3, 3, 2, 1});
  try {
    ops::conv2d(x, w, Tensor<double>{}, 1, 1);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,4,4,3]") != std::string::npos);
    CHECK(msg.find("[3,3,2,1]") != std::string::npos);
  }
}

TEST_CASE("circular shift moves columns left") {
  auto x = t64({1, 1, 4, 1}, {0, 1, 2, 3});
  CHECK(values(ops::circular_shift(x, ops::kAxisWidth, 1)) == std::vector<double>{1, 2, 3, 0});
  CHECK(values(ops::circular_shift(x, ops::kAxisWidth, 0)) == values(x));
  CHECK(values(ops::circular_shift(x, ops::kAxisWidth, 4)) == values(x));
}

TEST_CASE("circular shifts compose additively") {
  Rng rng(5);
  auto x = random_tensor({2, 5, 7, 3}, rng);
  for (int axis : {ops::kAxisHeight, ops::kAxisWidth}) {
    const std::int64_t L = x.dim(axis);
    for (int s1 = 0; s1 < 9; ++s1) {
      for (int s2 = 0; s2 < 9; ++s2) {
        auto twice = ops::circular_shift(ops::circular_shift(x, axis, s1), axis, s2);
        auto once = ops::circular_shift(x, axis, (s1 + s2) % L);
        CHECK(values(twice) == values(once));
      }
    }
  }
}

TEST_CASE("matmul") {
  auto a = t64({2, 2}, {1, 2, 3, 4});
  auto b = t64({2, 2}, {5, 6, 7, 8});
  CHECK(values(ops::matmul(a, b)) == std::vector<double>{19, 22, 43, 50});
  CHECK(values(ops::matmul(t64({2, 2}, {1, 0, 0, 1}), a)) == values(a));
  CHECK(values(ops::matmul(a, Tensor<double>::zeros({2, 3}))) == std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(ops::matmul(a, Tensor<double>::zeros({3, 2})), ShapeError);
}

TEST_CASE("softmax rows") {
  auto c = ops::softmax_lastdim(Tensor<double>::full({1, 4}, 2.5));
  for (double v : values(c)) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  auto d = values(ops::softmax_lastdim(t64({1, 3}, {1000, 0, 0})));
  CHECK(d[0] == doctest::Approx(1.0));
  CHECK(d[1] < 1e-300);
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({1, 17}, rng, -30, 30);
    auto y = values(ops::softmax_lastdim(x));
    double s = 0;
    for (double v : y) s += v;
    CHECK(std::abs(s - 1) <= 1e-6);
    auto shifted = values(ops::softmax_lastdim(ops::add(x, Tensor<double>::scalar(123.0))));
    CHECK(oracle::max_abs_diff(y, shifted) <= 1e-12);
  }
}

TEST_CASE("layer norm moments and degenerate rows") {
  auto ones = Tensor<double>::full({8}, 1.0);
  auto zeros = Tensor<double>::zeros({8});
  for (double v : values(ops::layer_norm(Tensor<double>::full({2, 8}, 3.0), ones, zeros))) {
    CHECK(v == 0.0);
  }
  Rng rng(4);
  auto x = random_tensor({3, 8}, rng, -5, 5);
  for (double v : values(ops::layer_norm(x, zeros, Tensor<double>::full({8}, 0.7)))) CHECK(v == 0.7);
  auto y = values(ops::layer_norm(random_tensor({1, 64}, rng, -5, 5), Tensor<double>::full({64}, 1.0),
                                  Tensor<double>::zeros({64})));
  double mean = 0, var = 0;
  for (double v : y) mean += v;
  mean /= 64;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= 64;
  CHECK(std::abs(mean) <= 1e-6);
  CHECK(std::abs(var - 1) <= 1e-4);
}

TEST_CASE("elementwise ops") {
  Rng rng(9);
  auto x = random_tensor({2, 3, 3, 4}, rng);
  for (double v : values(ops::sub(x, x))) CHECK(v == 0.0);
  CHECK(ops::sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
  auto a = Tensor<double>::zeros({2, 5, 5, 48});
  CHECK(ops::concat_channels<double>({a, a}).shape() == Shape{2, 5, 5, 96});
  CHECK_THROWS_AS(ops::add(x, Tensor<double>::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(ops::concat_channels<double>({x, Tensor<double>::zeros({2, 3, 4, 4})}), ShapeError);
  CHECK(ops::gelu(Tensor<double>::scalar(0.0)).item() == 0.0);
  CHECK(ops::silu(Tensor<double>::scalar(0.0)).item() == 0.0);
}

TEST_CASE("non-finite values are hard errors") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t64({2}, {1.0, nan}), NumericError);
  CHECK_THROWS_AS(ops::exp(Tensor<double>::scalar(1000.0)), NumericError);
}

TEST_CASE("every differentiable op passes a finite-difference check on several shapes") {
  Rng rng(21);
  const std::vector<Shape> shapes{{1, 3, 4, 2}, {2, 2, 5, 3}, {1, 4, 4, 1}};
  for (const auto& s : shapes) {
    auto x = random_tensor(s, rng, -1, 1, true);
    auto y = random_tensor(s, rng, -1, 1, true);
    auto wt = random_tensor(s, rng);
    auto weighted = [&](const Tensor<double>& t) { return ops::sum(ops::mul(t, wt)); };
    const std::vector<std::pair<const char*, std::function<Tensor<double>()>>> unary{
        {"sigmoid", [&] { return weighted(ops::sigmoid(x)); }},
        {"silu", [&] { return weighted(ops::silu(x)); }},
        {"gelu", [&] { return weighted(ops::gelu(x)); }},
        {"exp", [&] { return weighted(ops::exp(x)); }},
        {"softmax", [&] { return weighted(ops::softmax_lastdim(x)); }},
        {"shift_w", [&] { return weighted(ops::circular_shift(x, ops::kAxisWidth, 2)); }},
        {"shift_h", [&] { return weighted(ops::circular_shift(x, ops::kAxisHeight, 1)); }},
    };
    for (const auto& [name, f] : unary) {
      auto r = grad_check(name, f, {x}, 1e-4);
      INFO(name << " " << shape_str(s) << " err " << r.max_rel_error);
      CHECK(r.passed);
    }
    const std::vector<std::pair<const char*, std::function<Tensor<double>()>>> binary{
        {"add", [&] { return weighted(ops::add(x, y)); }},
        {"sub", [&] { return weighted(ops::sub(x, y)); }},
        {"mul", [&] { return weighted(ops::mul(x, y)); }},
        {"concat", [&] { return ops::sum(ops::mul(ops::concat_channels<double>({x, y}),
                                                  ops::concat_channels<double>({wt, wt}))); }},
    };
    for (const auto& [name, f] : binary) {
      auto r = grad_check(name, f, {x, y}, 1e-4);
      INFO(name << " " << shape_str(s) << " err " << r.max_rel_error);
      CHECK(r.passed);
    }
    auto g = random_tensor({s[3]}, rng, 0.5, 1.5, true);
    auto b = random_tensor({s[3]}, rng, -1, 1, true);
    auto r = grad_check("layer_norm", [&] { return weighted(ops::layer_norm(x, g, b)); }, {x, g, b}, 1e-4);
    CHECK(r.passed);
  }
}

TEST_CASE("conv into silu passes the gradient check") {
  Rng rng(2);
  auto x = random_tensor({1, 8, 8, 3}, rng, -1, 1, true);
  auto w = random_tensor({3, 3, 3, 4}, rng, -0.5, 0.5, true);
  auto b = random_tensor({4}, rng, -0.1, 0.1, true);
  auto r = grad_check("conv_silu", [&] { return ops::sum(ops::silu(ops::conv2d(x, w, b, 1, 1))); },
                      {x, w, b}, 1e-4);
  INFO("err " << r.max_rel_error);
  CHECK(r.passed);
}

TEST_CASE("gradient check of a sum is exact") {
  Rng rng(1);
  auto x = random_tensor({3, 4}, rng, -1, 1, true);
  auto r = grad_check("sum", [&] { return ops::sum(x); }, {x}, 1e-4);
  CHECK(r.max_rel_error <= 1e-9);
  CHECK(r.coordinates == 12);
}

TEST_CASE("sgd with momentum and weight decay") {
  Rng rng(0);
  auto run = [&](double g, double lr, double mom, double wd, int steps) {
    ParameterStore<double> store;
    auto w = store.add("w", {1}, Init::kOnes, rng);
    std::vector<double> trace{w.item()};
    for (int i = 0; i < steps; ++i) {
      store.get("w").mutable_grad()[0] = g;
      sgd_step(store, {lr, mom, wd});
      trace.push_back(store.get("w").item());
    }
    return trace;
  };
  CHECK(run(1, 0.1, 0, 0, 1).back() == doctest::Approx(0.9).epsilon(1e-15));
  auto two = run(1, 0.1, 0.9, 0, 2);
  CHECK(two[1] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(two[2] == doctest::Approx(0.71).epsilon(1e-15));
  CHECK(run(0, 0.1, 0.9, 0, 3).back() == 1.0);

  ParameterStore<double> store;
  store.add("bad", {2}, Init::kOnes, rng);
  store.get("bad").mutable_grad()[1] = std::numeric_limits<double>::infinity();
  try {
    sgd_step(store, {});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("bad") != std::string::npos);
  }
}

TEST_CASE("parameter names are unique") {
  Rng rng(0);
  ParameterStore<float> store;
  store.add("a", {2}, Init::kZeros, rng);
  CHECK_THROWS(store.add("a", {3}, Init::kZeros, rng));
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42, 3), b(42, 3), c(42, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs = differs || va != c.next_u64();
  }
  CHECK(differs);
  // Reference splitmix64 stream from state 0.
  CHECK(mix64(0x9E3779B97F4A7C15ULL) == 16294208416658607535ULL);
  CHECK(mix64(0x3C6EF372FE94F82AULL) == 7960286522194355700ULL);
  Rng pinned(0, 0);
  CHECK(pinned.next_u64() == 17716442196862346550ULL);
  CHECK(pinned.next_u64() == 8966348002303269569ULL);
  auto s = sample_without_replacement(50, 50, a);
  std::sort(s.begin(), s.end());
  for (int i = 0; i < 50; ++i) CHECK(s[std::size_t(i)] == i);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "smokedet_ckpt_test";
  std::filesystem::create_directories(dir);
  for (int pass = 0; pass < 2; ++pass) {
    Rng r1(1), r2(2);
    ParameterStore<double> a, b;
    for (auto* st : {&a, &b}) {
      auto& r = st == &a ? r1 : r2;
      st->add("conv.w", {3, 3, 2, 4}, Init::kFanInUniform, r);
      st->add("conv.b", {4}, Init::kFanInUniform, r);
    }
    for (auto& p : a.params()) {
      for (std::size_t i = 0; i < p.momentum.size(); ++i) p.momentum[i] = 1.0 / double(i + 3);
    }
    save_checkpoint(dir / "m.json", a, {{"step", 5}}, pass == 1);
    auto meta = load_checkpoint(dir / "m.json", b, pass == 1);
    CHECK(meta.at("step") == 5);
    for (std::size_t k = 0; k < a.params().size(); ++k) {
      CHECK(values(a.params()[k].tensor) == values(b.params()[k].tensor));
      if (pass == 1) CHECK(a.params()[k].momentum == b.params()[k].momentum);
    }
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
