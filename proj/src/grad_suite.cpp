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

#include "grad_suite.hpp"

#include <functional>

#include "assign.hpp"
#include "ccpe.hpp"
#include "model.hpp"
#include "ops.hpp"

namespace smokedet {

namespace {

using T64 = Tensor<double>;

T64 random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T64::from_data(std::move(shape), std::move(v), true);
}

// Fixed random weights so a non-scalar output tests every output coordinate.
T64 weighted_sum(const T64& y, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(y.size()));
  for (auto& x : w) x = rng.uniform(-1, 1);
  return ops::sum(ops::mul(y, T64::from_data(y.shape(), std::move(w))));
}

std::vector<T64> store_tensors(const ParameterStore<double>& store) {
  std::vector<T64> out;
  for (const auto& p : store.params()) out.push_back(p.tensor);
  return out;
}

}  // namespace

std::vector<GradCheckResult> run_grad_suite(const GradSuiteOptions& opt) {
  std::vector<GradCheckResult> results;
  Rng rng(opt.seed, 0x7375697465ULL);
  GradCheckOptions gc;
  gc.step = opt.step;
  gc.seed = opt.seed;

  auto check = [&](const std::string& name, std::vector<T64> inputs,
                   const std::function<T64()>& f, std::int64_t samples = 0) {
    GradCheckOptions o = gc;
    o.max_samples_per_input = samples;
    results.push_back(grad_check(name, f, std::move(inputs), opt.tolerance, o));
  };
  auto conv = [&](const T64& x, const T64& w, const T64& b, int stride, int pad) {
    T64 y = ops::conv2d(x, w, b, stride, pad);
    return opt.inject_conv_fault ? ops::corrupt_grad(y, 1.5) : y;
  };

  {
    auto x = random_tensor({2, 5, 6, 3}, rng), w = random_tensor({3, 3, 3, 4}, rng),
         b = random_tensor({4}, rng);
    const Rng wr = rng.child(1);
    check("conv2d_3x3", {x, w, b}, [=] {
      Rng r = wr;
      return weighted_sum(conv(x, w, b, 1, 1), r);
    });
  }
  {
    auto x = random_tensor({1, 7, 8, 2}, rng), w = random_tensor({3, 3, 2, 3}, rng),
         b = random_tensor({3}, rng);
    const Rng wr = rng.child(2);
    check("conv2d_stride2", {x, w, b}, [=] {
      Rng r = wr;
      return weighted_sum(conv(x, w, b, 2, 1), r);
    });
  }
  {
    auto x = random_tensor({2, 8, 8, 3}, rng), w = random_tensor({4, 4, 3, 5}, rng);
    const Rng wr = rng.child(3);
    check("conv2d_patch4", {x, w}, [=] {
      Rng r = wr;
      return weighted_sum(conv(x, w, T64(), 4, 0), r);
    });
  }
  {
    auto x = random_tensor({1, 4, 5, 6}, rng), w = random_tensor({1, 1, 6, 3}, rng),
         b = random_tensor({3}, rng);
    const Rng wr = rng.child(4);
    check("conv2d_1x1", {x, w, b}, [=] {
      Rng r = wr;
      return weighted_sum(conv(x, w, b, 1, 0), r);
    });
  }

  auto unary = [&](const std::string& name, Shape shape, std::function<T64(const T64&)> op,
                   double lo = -1, double hi = 1) {
    auto x = random_tensor(shape, rng, lo, hi);
    const Rng wr = rng.child(results.size() + 100);
    check(name, {x}, [=] {
      Rng r = wr;
      return weighted_sum(op(x), r);
    });
  };
  unary("circular_shift_width", {2, 3, 6, 2},
        [](const T64& x) { return ops::circular_shift(x, ops::kAxisWidth, 4); });
  unary("circular_shift_height", {2, 5, 3, 2},
        [](const T64& x) { return ops::circular_shift(x, ops::kAxisHeight, 2); });
  unary("softmax", {3, 4, 5}, [](const T64& x) { return ops::softmax_lastdim(x); });
  unary("scale", {3, 4}, [](const T64& x) { return ops::scale(x, 2.5); });
  unary("sigmoid", {3, 4}, [](const T64& x) { return ops::sigmoid(x); }, -4, 4);
  unary("silu", {3, 4}, [](const T64& x) { return ops::silu(x); }, -4, 4);
  unary("gelu", {3, 4}, [](const T64& x) { return ops::gelu(x); }, -4, 4);
  unary("exp", {3, 4}, [](const T64& x) { return ops::exp(x); });
  unary("reshape", {2, 3, 4}, [](const T64& x) { return ops::reshape(x, {6, 4}); });
  unary("permute", {2, 3, 4, 5},
        [](const T64& x) { return ops::permute(x, std::vector<int>{0, 2, 3, 1}); });
  unary("slice", {2, 6, 3}, [](const T64& x) { return ops::slice(x, 1, 2, 3); });
  unary("pad_bottom_right", {1, 3, 5, 2},
        [](const T64& x) { return ops::pad_bottom_right(x, 1, 3); });
  unary("upsample_nearest2x", {1, 3, 4, 2}, [](const T64& x) { return ops::upsample_nearest2x(x); });
  unary("sum", {4, 5}, [](const T64& x) { return ops::sum(x); });
  unary("gather_rows", {5, 3}, [](const T64& x) {
    return ops::gather_rows(x, std::vector<std::int64_t>{4, 0, 4, 2});
  });

  auto binary = [&](const std::string& name, Shape sa, Shape sb,
                    std::function<T64(const T64&, const T64&)> op) {
    auto a = random_tensor(sa, rng), b = random_tensor(sb, rng);
    const Rng wr = rng.child(results.size() + 200);
    check(name, {a, b}, [=] {
      Rng r = wr;
      return weighted_sum(op(a, b), r);
    });
  };
  binary("add", {3, 4}, {3, 4}, [](const T64& a, const T64& b) { return ops::add(a, b); });
  binary("add_scalar", {3, 4}, {1}, [](const T64& a, const T64& b) { return ops::add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](const T64& a, const T64& b) { return ops::sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](const T64& a, const T64& b) { return ops::mul(a, b); });
  binary("mul_scalar", {3, 4}, {1}, [](const T64& a, const T64& b) { return ops::mul(a, b); });
  binary("matmul", {3, 4}, {4, 5}, [](const T64& a, const T64& b) { return ops::matmul(a, b); });
  binary("bmm", {2, 3, 4}, {2, 4, 5}, [](const T64& a, const T64& b) { return ops::bmm(a, b); });
  binary("bmm_transposed", {2, 3, 4}, {2, 5, 4},
         [](const T64& a, const T64& b) { return ops::bmm(a, b, true); });
  binary("concat_channels", {1, 2, 3, 2}, {1, 2, 3, 4},
         [](const T64& a, const T64& b) { return ops::concat_channels<double>({a, b}); });
  binary("concat_height", {1, 2, 3, 2}, {1, 4, 3, 2},
         [](const T64& a, const T64& b) { return ops::concat<double>({a, b}, 1); });
  {
    auto x = random_tensor({2, 3, 6}, rng), g = random_tensor({6}, rng, 0.5, 1.5),
         b = random_tensor({6}, rng);
    const Rng wr = rng.child(300);
    check("layer_norm", {x, g, b}, [=] {
      Rng r = wr;
      return weighted_sum(ops::layer_norm(x, g, b), r);
    });
  }
  {
    auto logits = random_tensor({12}, rng, -3, 3);
    std::vector<double> t, w;
    for (int i = 0; i < 12; ++i) {
      t.push_back(i % 3 == 0 ? 1.0 : 0.0);
      w.push_back(i % 4 == 3 ? 0.0 : 1.0);
    }
    check("bce_with_logits", {logits}, [=] { return ops::bce_with_logits_sum(logits, t, w); });
  }
  {
    // Targets near the decoded predictions keep every pair partially overlapping.
    auto raw = random_tensor({4, 4}, rng, -0.3, 0.3);
    std::vector<ops::CellAnchor> anchors{{1, 2, 8}, {3, 0, 8}, {0, 0, 16}, {2, 1, 32}};
    std::vector<double> targets;
    for (const auto& a : anchors) {
      const double cx = (a.grid_x + 0.5) * a.stride, cy = (a.grid_y + 0.5) * a.stride;
      const double hw = a.stride * rng.uniform(0.6, 1.4) / 2, hh = a.stride * rng.uniform(0.6, 1.4) / 2;
      const double ox = a.stride * rng.uniform(-0.2, 0.2), oy = a.stride * rng.uniform(-0.2, 0.2);
      targets.insert(targets.end(), {cx + ox - hw, cy + oy - hh, cx + ox + hw, cy + oy + hh});
    }
    check("box_iou_loss", {raw}, [=] { return ops::box_iou_loss_sum(raw, anchors, targets); });
  }

  {
    ParameterStore<double> store;
    Rng init(opt.seed, 11);
    ContrastConfig cfg;
    cfg.strides_h = {1, 2, 3};
    cfg.strides_v = {1, 2};
    cfg.base_channels = 8;
    Ccpe<double> ccpe(cfg, 16, 16, store, init);
    auto x = random_tensor({1, 16, 16, 3}, rng);
    auto inputs = store_tensors(store);
    inputs.push_back(x);
    const Rng wr = rng.child(400);
    check("ccpe_embed", inputs, [=] {
      Rng r = wr;
      return weighted_sum(ccpe.embed(x), r);
    }, 24);
  }
  {
    ParameterStore<double> store;
    Rng init(opt.seed, 12);
    auto block = make_attention_block(store, "block", 8, 2, 4, 2, init);
    auto x = random_tensor({1, 6, 5, 8}, rng);
    auto inputs = store_tensors(store);
    inputs.push_back(x);
    const Rng wr = rng.child(500);
    check("attention_block", inputs, [=] {
      Rng r = wr;
      return weighted_sum(window_attention_block(x, block), r);
    }, 24);
  }

  ModelConfig mc;
  mc.channels = 4;
  mc.heads = {1, 2, 4};
  mc.input_size = 64;
  mc.ccpe.strides_h = {1, 2, 4, 8};
  mc.ccpe.strides_v = {1, 2, 4, 8};
  Detector<double> det(mc, opt.seed);
  {
    const auto ch = mc.stage_channels();
    FeatureMaps<double> fm;
    for (int s = 0; s < 3; ++s) {
      const std::int64_t side = 64 / kFeatureStrides[static_cast<std::size_t>(s)];
      fm.levels[static_cast<std::size_t>(s)] = random_tensor({1, side, side, ch[static_cast<std::size_t>(s)]}, rng);
    }
    std::vector<T64> inputs;
    for (const auto& p : det.params().params()) {
      if (p.name.rfind("head", 0) == 0) inputs.push_back(p.tensor);
    }
    for (const auto& l : fm.levels) inputs.push_back(l);
    const Rng wr = rng.child(600);
    check("detection_head", inputs, [=, &det] {
      Rng r = wr;
      std::vector<T64> parts;
      for (const auto& h : det.head(fm)) {
        parts.push_back(weighted_sum(h.conf, r));
        parts.push_back(weighted_sum(h.cls, r));
        parts.push_back(weighted_sum(h.box, r));
      }
      T64 total = parts[0];
      for (std::size_t i = 1; i < parts.size(); ++i) total = ops::add(total, parts[i]);
      return total;
    }, 12);
  }
  {
    auto images = random_tensor({1, 64, 64, 3}, rng, 0, 1);
    const std::vector<std::vector<GtBox>> gts{{{14, 10, 38, 30, 0}, {40, 36, 60, 62, 0}}};
    const auto layout = LocationLayout::for_input(64, 64);
    const Targets targets = assign_positives(gts, layout);
    std::vector<double> conf;
    {
      NoGradGuard ng;
      conf = flatten_conf(det.forward(images));
    }
    Rng sample_rng(opt.seed, 13);
    SamplingConfig sc;
    sc.alpha1 = 2;
    const MaskSet masks = build_masks(targets, {true}, conf, sc, sample_rng);
    auto inputs = store_tensors(det.params());
    inputs.push_back(images);
    check("total_loss", inputs, [=, &det] {
      return compute_losses(det.forward(images), targets, masks).total;
    }, 3);
  }
  return results;
}

}  // namespace smokedet
