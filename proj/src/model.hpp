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

#ifndef SMOKEDET_MODEL_HPP_
#define SMOKEDET_MODEL_HPP_

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ccpe.hpp"
#include "ops.hpp"
#include "params.hpp"

namespace smokedet {

enum class TemporalMode { kSingle, kConcat2 };

inline constexpr std::array<int, 3> kFeatureStrides{8, 16, 32};

struct ModelConfig {
  int channels = 24;  // P2 carries 2x this, P3 4x, P4 8x
  int window_size = 4;
  std::vector<int> heads{2, 4, 8};
  int mlp_ratio = 2;
  int num_classes = 1;
  TemporalMode temporal_mode = TemporalMode::kSingle;
  bool use_ccpe = true;
  ContrastConfig ccpe;
  int input_size = 128;

  int input_channels() const { return temporal_mode == TemporalMode::kConcat2 ? 6 : 3; }
  std::array<int, 3> stage_channels() const { return {2 * channels, 4 * channels, 8 * channels}; }
  void validate() const;
};

template <typename T>
struct FeatureMaps {
  std::array<Tensor<T>, 3> levels;  // P2, P3, P4
};

template <typename T>
struct HeadOutput {
  Tensor<T> conf;  // [B,h,w,1]
  Tensor<T> cls;   // [B,h,w,num_classes]
  Tensor<T> box;   // [B,h,w,4] raw (dx,dy,dw,dh)
  int stride = 8;
};

template <typename T>
struct ConvLayer {
  Tensor<T> w, b;
  int stride = 1;
  int pad = 0;
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

template <typename T>
ConvLayer<T> make_conv(ParameterStore<T>& store, const std::string& name, int k, int cin,
                       int cout, int stride, Rng& rng);

template <typename T>
struct AttentionBlock {
  int heads = 1;
  int window = 4;
  Tensor<T> ln1_g, ln1_b;
  ConvLayer<T> qkv, proj;
  Tensor<T> ln2_g, ln2_b;
  ConvLayer<T> fc1, fc2;
};

template <typename T>
AttentionBlock<T> make_attention_block(ParameterStore<T>& store, const std::string& name,
                                       int channels, int heads, int window, int mlp_ratio,
                                       Rng& rng);

/// Pre-norm windowed multi-head self-attention + MLP, both residual. When
/// `attention` is given it receives the softmax weights [windows*heads, N, N].
template <typename T>
Tensor<T> window_attention_block(const Tensor<T>& x, const AttentionBlock<T>& p,
                                 Tensor<T>* attention = nullptr);

template <typename T>
struct FusionParams {
  ConvLayer<T> lateral4, lateral3;  // 1x1: P4->P3 width, P3->P2 width
  ConvLayer<T> down2, down3;        // 3x3 stride 2
  std::array<ConvLayer<T>, 3> smooth;
};

/// Top-down (nearest 2x upsample + 1x1 lateral + add), bottom-up (stride-2
/// conv + add), then 3x3 smoothing convs with SiLU.
template <typename T>
FeatureMaps<T> pafpn_fuse(const FeatureMaps<T>& p, const FusionParams<T>& params);

template <typename T>
struct HeadParams {
  ConvLayer<T> cls_stem, reg_stem;  // 3x3
  ConvLayer<T> conf, cls, box;      // 1x1
};

/// Initial conf/cls bias, logit of a 0.01 prior.
inline constexpr double kScorePriorLogit = -4.59511985013459;

struct Detection {
  std::array<double, 4> box;  // x1,y1,x2,y2 in network-input pixels
  double score = 0;
};

struct DecodeOptions {
  double score_floor = 1e-3;
  double nms_iou = 0.65;
  int max_detections = 100;
  double image_w = 0;  // clip bounds; 0 disables clipping
  double image_h = 0;
};

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

/// Class-agnostic greedy NMS; input order does not matter, output sorted by
/// descending score.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Per-image detections from head outputs of a batch.
template <typename T>
std::vector<std::vector<Detection>> decode_boxes(const std::vector<HeadOutput<T>>& head,
                                                 const DecodeOptions& opt);

/// Raw (dx,dy,dw,dh) that decode to `box` at the given cell.
std::array<double, 4> encode_box(const std::array<double, 4>& box, const ops::CellAnchor& anchor);

template <typename T>
class Detector {
 public:
  Detector(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }

  Tensor<T> embed(const Tensor<T>& images) const;
  FeatureMaps<T> backbone(const Tensor<T>& embedding) const;
  FeatureMaps<T> fuse(const FeatureMaps<T>& p) const { return pafpn_fuse(p, fusion_); }
  std::vector<HeadOutput<T>> head(const FeatureMaps<T>& p) const;
  std::vector<HeadOutput<T>> forward(const Tensor<T>& images) const;

  std::int64_t embed_param_count() const;

  FusionParams<T>& fusion_params() { return fusion_; }
  std::vector<HeadParams<T>>& head_params() { return heads_; }
  std::vector<AttentionBlock<T>>& blocks() { return blocks_; }

 private:
  ModelConfig cfg_;
  ParameterStore<T> store_;
  std::optional<Ccpe<T>> ccpe_;
  std::optional<PatchEmbed<T>> patch_;
  std::array<ConvLayer<T>, 3> downsample_;
  std::vector<AttentionBlock<T>> blocks_;  // two per stage
  FusionParams<T> fusion_;
  std::vector<HeadParams<T>> heads_;
};

}  // namespace smokedet

#endif  // SMOKEDET_MODEL_HPP_
