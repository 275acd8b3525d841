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

#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace smokedet {

void ModelConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("model: channels must be positive");
  if (window_size < 1) throw std::invalid_argument("model: window size must be positive");
  if (heads.size() != 3) throw std::invalid_argument("model: expected three head counts");
  if (mlp_ratio < 1) throw std::invalid_argument("model: mlp_ratio must be positive");
  if (num_classes < 1) throw std::invalid_argument("model: num_classes must be positive");
  const auto ch = stage_channels();
  for (std::size_t i = 0; i < 3; ++i) {
    if (heads[i] < 1 || ch[i] % heads[i] != 0) {
      throw std::invalid_argument("model: stage " + std::to_string(i) + " width " +
                                  std::to_string(ch[i]) + " not divisible by " +
                                  std::to_string(heads[i]) + " heads");
    }
  }
  if (input_size < 32 || input_size % 32 != 0) {
    throw std::invalid_argument("model: input size must be a positive multiple of 32, got " +
                                std::to_string(input_size));
  }
  if (use_ccpe) {
    if (ccpe.in_channels != input_channels()) {
      throw std::invalid_argument("model: ccpe input channels do not match temporal mode");
    }
    if (ccpe.patch_stride != 4 || ccpe.out_channels() != 96) {
      throw std::invalid_argument("model: embedding must be stride 4 with 96 channels");
    }
    ccpe.validate(input_size, input_size);
  }
}

template <typename T>
ConvLayer<T> make_conv(ParameterStore<T>& store, const std::string& name, int k, int cin,
                       int cout, int stride, Rng& rng) {
  ConvLayer<T> c;
  c.w = store.add(name + ".w", {k, k, cin, cout}, Init::kFanInUniform, rng);
  c.b = store.add(name + ".b", {cout}, Init::kZeros, rng);
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

template <typename T>
AttentionBlock<T> make_attention_block(ParameterStore<T>& store, const std::string& name,
                                       int channels, int heads, int window, int mlp_ratio,
                                       Rng& rng) {
  AttentionBlock<T> b;
  b.heads = heads;
  b.window = window;
  b.ln1_g = store.add(name + ".ln1.gamma", {channels}, Init::kOnes, rng);
  b.ln1_b = store.add(name + ".ln1.beta", {channels}, Init::kZeros, rng);
  b.qkv = make_conv(store, name + ".qkv", 1, channels, 3 * channels, 1, rng);
  b.proj = make_conv(store, name + ".proj", 1, channels, channels, 1, rng);
  b.ln2_g = store.add(name + ".ln2.gamma", {channels}, Init::kOnes, rng);
  b.ln2_b = store.add(name + ".ln2.beta", {channels}, Init::kZeros, rng);
  b.fc1 = make_conv(store, name + ".fc1", 1, channels, mlp_ratio * channels, 1, rng);
  b.fc2 = make_conv(store, name + ".fc2", 1, mlp_ratio * channels, channels, 1, rng);
  return b;
}

template <typename T>
Tensor<T> window_attention_block(const Tensor<T>& x, const AttentionBlock<T>& p,
                                 Tensor<T>* attention) {
  const std::int64_t B = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::int64_t ws = p.window, H = p.heads;
  if (c % H != 0) throw ShapeError("window_attention_block: channels not divisible by heads");
  const std::int64_t d = c / H;
  const std::int64_t ph = (ws - h % ws) % ws, pw = (ws - w % ws) % ws;
  const std::int64_t hp = h + ph, wp = w + pw, nh = hp / ws, nw = wp / ws;
  const std::int64_t G = B * nh * nw * H, N = ws * ws;

  auto y = ops::layer_norm(x, p.ln1_g, p.ln1_b);
  y = ops::pad_bottom_right(y, ph, pw);
  auto qkv = ops::reshape(p.qkv(y), {B, nh, ws, nw, ws, 3, H, d});
  qkv = ops::reshape(ops::permute(qkv, {5, 0, 1, 3, 6, 2, 4, 7}), {3, G, N, d});
  auto q = ops::reshape(ops::slice(qkv, 0, 0, 1), {G, N, d});
  auto k = ops::reshape(ops::slice(qkv, 0, 1, 1), {G, N, d});
  auto v = ops::reshape(ops::slice(qkv, 0, 2, 1), {G, N, d});
  auto scores = ops::scale(ops::bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(double(d))));
  auto attn = ops::softmax_lastdim(scores);
  if (attention) *attention = attn;
  auto o = ops::reshape(ops::bmm(attn, v), {B, nh, nw, H, ws, ws, d});
  o = ops::reshape(ops::permute(o, {0, 1, 4, 2, 5, 3, 6}), {B, hp, wp, c});
  if (ph || pw) o = ops::slice(ops::slice(o, 1, 0, h), 2, 0, w);
  auto out = ops::add(x, p.proj(o));
  auto m = p.fc2(ops::gelu(p.fc1(ops::layer_norm(out, p.ln2_g, p.ln2_b))));
  return ops::add(out, m);
}

template <typename T>
FeatureMaps<T> pafpn_fuse(const FeatureMaps<T>& p, const FusionParams<T>& f) {
  const auto& [p2, p3, p4] = p.levels;
  // top-down
  auto td3 = ops::add(p3, ops::upsample_nearest2x(f.lateral4(p4)));
  auto td2 = ops::add(p2, ops::upsample_nearest2x(f.lateral3(td3)));
  // bottom-up
  auto bu3 = ops::add(td3, f.down2(td2));
  auto bu4 = ops::add(p4, f.down3(bu3));
  FeatureMaps<T> out;
  out.levels[0] = ops::silu(f.smooth[0](td2));
  out.levels[1] = ops::silu(f.smooth[1](bu3));
  out.levels[2] = ops::silu(f.smooth[2](bu4));
  return out;
}

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double iw = std::min(a[2], b[2]) - std::max(a[0], b[0]);
  const double ih = std::min(a[3], b[3]) - std::max(a[1], b[1]);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool keep = true;
    for (const auto& k : kept) {
      if (box_iou(d.box, k.box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(d);
  }
  return kept;
}

std::array<double, 4> encode_box(const std::array<double, 4>& box, const ops::CellAnchor& a) {
  const double cx = 0.5 * (box[0] + box[2]), cy = 0.5 * (box[1] + box[3]);
  return {cx / a.stride - a.grid_x - 0.5, cy / a.stride - a.grid_y - 0.5,
          std::log((box[2] - box[0]) / a.stride), std::log((box[3] - box[1]) / a.stride)};
}

namespace {
double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

template <typename T>
std::vector<std::vector<Detection>> decode_boxes(const std::vector<HeadOutput<T>>& head,
                                                 const DecodeOptions& opt) {
  if (head.empty()) return {};
  const std::int64_t B = head[0].conf.dim(0);
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    std::vector<Detection> cand;
    for (const auto& level : head) {
      const std::int64_t h = level.conf.dim(1), w = level.conf.dim(2);
      const std::int64_t nc = level.cls.dim(3);
      auto conf = level.conf.data();
      auto cls = level.cls.data();
      auto box = level.box.data();
      for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
          const std::int64_t cell = (b * h + i) * w + j;
          double best = -INFINITY;
          for (std::int64_t k = 0; k < nc; ++k) best = std::max(best, double(cls[cell * nc + k]));
          const double score = sigmoid_d(conf[cell]) * sigmoid_d(best);
          if (score < opt.score_floor) continue;
          const T* r = box.data() + cell * 4;
          auto bb = ops::decode_box(r[0], r[1], r[2], r[3],
                                    {double(j), double(i), double(level.stride)});
          if (opt.image_w > 0) {
            bb[0] = std::clamp(bb[0], 0.0, opt.image_w);
            bb[2] = std::clamp(bb[2], 0.0, opt.image_w);
          }
          if (opt.image_h > 0) {
            bb[1] = std::clamp(bb[1], 0.0, opt.image_h);
            bb[3] = std::clamp(bb[3], 0.0, opt.image_h);
          }
          if (bb[2] <= bb[0] || bb[3] <= bb[1]) continue;
          cand.push_back({bb, score});
        }
      }
    }
    auto kept = nms(std::move(cand), opt.nms_iou);
    if (static_cast<int>(kept.size()) > opt.max_detections) kept.resize(opt.max_detections);
    out[static_cast<std::size_t>(b)] = std::move(kept);
  }
  return out;
}

template <typename T>
Detector<T>::Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.ccpe.in_channels = cfg_.input_channels();
  cfg_.validate();
  Rng rng(seed, 0x6d6f64656cULL);
  if (cfg_.use_ccpe) {
    ccpe_.emplace(cfg_.ccpe, cfg_.input_size, cfg_.input_size, store_, rng);
  } else {
    patch_.emplace(cfg_.input_channels(), 96, 4, store_, rng);
  }
  const auto ch = cfg_.stage_channels();
  int cin = 96;
  for (int s = 0; s < 3; ++s) {
    const std::string stage = "stage" + std::to_string(s + 2);
    downsample_[s] = make_conv(store_, stage + ".down", 3, cin, ch[s], 2, rng);
    for (int k = 0; k < 2; ++k) {
      blocks_.push_back(make_attention_block(store_, stage + ".block" + std::to_string(k), ch[s],
                                             cfg_.heads[s], cfg_.window_size, cfg_.mlp_ratio,
                                             rng));
    }
    cin = ch[s];
  }
  fusion_.lateral4 = make_conv(store_, "fpn.lateral4", 1, ch[2], ch[1], 1, rng);
  fusion_.lateral3 = make_conv(store_, "fpn.lateral3", 1, ch[1], ch[0], 1, rng);
  fusion_.down2 = make_conv(store_, "fpn.down2", 3, ch[0], ch[1], 2, rng);
  fusion_.down3 = make_conv(store_, "fpn.down3", 3, ch[1], ch[2], 2, rng);
  for (int s = 0; s < 3; ++s) {
    fusion_.smooth[s] = make_conv(store_, "fpn.smooth" + std::to_string(s), 3, ch[s], ch[s], 1, rng);
  }
  const int width = ch[0];
  for (int s = 0; s < 3; ++s) {
    const std::string n = "head" + std::to_string(s);
    HeadParams<T> hp;
    hp.cls_stem = make_conv(store_, n + ".cls_stem", 3, ch[s], width, 1, rng);
    hp.reg_stem = make_conv(store_, n + ".reg_stem", 3, ch[s], width, 1, rng);
    hp.conf = make_conv(store_, n + ".conf", 1, width, 1, 1, rng);
    hp.cls = make_conv(store_, n + ".cls", 1, width, cfg_.num_classes, 1, rng);
    hp.box = make_conv(store_, n + ".box", 1, width, 4, 1, rng);
    // Start confidence and class scores at a 0.01 foreground prior.
    for (auto* b : {&hp.conf.b, &hp.cls.b}) {
      for (auto& v : b->mutable_data()) v = static_cast<T>(kScorePriorLogit);
    }
    heads_.push_back(hp);
  }
}

template <typename T>
Tensor<T> Detector<T>::embed(const Tensor<T>& images) const {
  return ccpe_ ? ccpe_->embed(images) : patch_->embed(images);
}

template <typename T>
FeatureMaps<T> Detector<T>::backbone(const Tensor<T>& embedding) const {
  if (embedding.rank() != 4 || embedding.dim(3) != 96) {
    throw ShapeError("backbone: expected [B,H/4,W/4,96] embedding, got " +
                     shape_str(embedding.shape()));
  }
  FeatureMaps<T> out;
  Tensor<T> x = embedding;
  for (int s = 0; s < 3; ++s) {
    if (x.dim(1) < 2 || x.dim(2) < 2) {
      throw ShapeError("backbone: spatial dims " + shape_str(x.shape()) +
                       " too small for stage " + std::to_string(s + 2));
    }
    x = downsample_[s](x);
    x = window_attention_block(x, blocks_[static_cast<std::size_t>(2 * s)]);
    x = window_attention_block(x, blocks_[static_cast<std::size_t>(2 * s + 1)]);
    out.levels[static_cast<std::size_t>(s)] = x;
  }
  return out;
}

template <typename T>
std::vector<HeadOutput<T>> Detector<T>::head(const FeatureMaps<T>& p) const {
  std::vector<HeadOutput<T>> out;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& hp = heads_[s];
    auto cls_feat = ops::silu(hp.cls_stem(p.levels[s]));
    auto reg_feat = ops::silu(hp.reg_stem(p.levels[s]));
    out.push_back({hp.conf(cls_feat), hp.cls(cls_feat), hp.box(reg_feat), kFeatureStrides[s]});
  }
  return out;
}

template <typename T>
std::vector<HeadOutput<T>> Detector<T>::forward(const Tensor<T>& images) const {
  return head(fuse(backbone(embed(images))));
}

template <typename T>
std::int64_t Detector<T>::embed_param_count() const {
  return store_.count(cfg_.use_ccpe ? "ccpe." : "patch.");
}

#define SMOKEDET_INSTANTIATE_MODEL(T)                                                       \
  template ConvLayer<T> make_conv(ParameterStore<T>&, const std::string&, int, int, int, int, \
                                  Rng&);                                                    \
  template AttentionBlock<T> make_attention_block(ParameterStore<T>&, const std::string&,   \
                                                  int, int, int, int, Rng&);                \
  template Tensor<T> window_attention_block(const Tensor<T>&, const AttentionBlock<T>&,     \
                                            Tensor<T>*);                                    \
  template FeatureMaps<T> pafpn_fuse(const FeatureMaps<T>&, const FusionParams<T>&);        \
  template std::vector<std::vector<Detection>> decode_boxes(                                \
      const std::vector<HeadOutput<T>>&, const DecodeOptions&);                             \
  template class Detector<T>;

SMOKEDET_INSTANTIATE_MODEL(float)
SMOKEDET_INSTANTIATE_MODEL(double)

}  // namespace smokedet
