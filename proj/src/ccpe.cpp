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

#include "ccpe.hpp"

#include <stdexcept>

#include "ops.hpp"

namespace smokedet {

void ContrastConfig::validate(std::int64_t input_h, std::int64_t input_w) const {
  if (in_channels != 3 && in_channels != 6) {
    throw std::invalid_argument("ccpe: in_channels must be 3 or 6 (temporal), got " +
                                std::to_string(in_channels));
  }
  if (base_channels < 1 || mask_channels < 1 || patch_stride < 1) {
    throw std::invalid_argument("ccpe: channel counts and patch stride must be positive");
  }
  if (input_h % patch_stride != 0 || input_w % patch_stride != 0) {
    throw std::invalid_argument("ccpe: input " + std::to_string(input_h) + "x" +
                                std::to_string(input_w) + " not divisible by patch stride");
  }
  if (strides_h.empty() || strides_v.empty()) {
    throw std::invalid_argument("ccpe: stride sets must be non-empty");
  }
  const std::int64_t fh = input_h / patch_stride, fw = input_w / patch_stride;
  const std::int64_t limit = std::min(fh, fw);
  for (const auto* set : {&strides_h, &strides_v}) {
    for (int s : *set) {
      if (s < 1 || s >= limit) {
        throw std::invalid_argument("ccpe: stride " + std::to_string(s) +
                                    " invalid for feature map " + std::to_string(fh) + "x" +
                                    std::to_string(fw) + " (must be in [1, " +
                                    std::to_string(limit) + "))");
      }
    }
  }
}

std::int64_t ccpe_param_count(const ContrastConfig& cfg) {
  const std::int64_t c = cfg.base_channels, m = cfg.mask_channels;
  const std::int64_t k = cfg.patch_stride;
  std::int64_t n = k * k * cfg.in_channels * c + c;
  for (const auto* set : {&cfg.strides_h, &cfg.strides_v}) {
    const auto s = static_cast<std::int64_t>(set->size());
    n += s * (9 * c * m + m);
    n += 9 * (c + s * m) * c + c;
  }
  if (cfg.final_norm) n += 2 * cfg.out_channels();
  return n;
}

std::int64_t vanilla_patch_embed_param_count(int in_channels, int out_channels) {
  // 4x4 conv + bias + layer norm affine.
  return 16LL * in_channels * out_channels + out_channels + 2LL * out_channels;
}

double ccpe_flops(const ContrastConfig& cfg, std::int64_t h, std::int64_t w) {
  const double cells = static_cast<double>(h / cfg.patch_stride) * (w / cfg.patch_stride);
  const double c = cfg.base_channels, m = cfg.mask_channels;
  const double k = cfg.patch_stride;
  double per_cell = k * k * cfg.in_channels * c;
  for (const auto* set : {&cfg.strides_h, &cfg.strides_v}) {
    const double s = static_cast<double>(set->size());
    per_cell += s * c;              // F - F_s
    per_cell += s * 9 * c * m;      // mask convs
    per_cell += 9 * (c + s * m) * c;  // fusion conv
  }
  if (cfg.final_norm) per_cell += 4.0 * cfg.out_channels();
  return per_cell * cells;
}

double vanilla_patch_embed_flops(int in_channels, int out_channels, std::int64_t h,
                                 std::int64_t w) {
  const double cells = static_cast<double>(h / 4) * (w / 4);
  return cells * (16.0 * in_channels * out_channels + 4.0 * out_channels);
}

template <typename T>
Tensor<T> contrast_difference(const Tensor<T>& f, int axis, std::int64_t s) {
  return ops::sub(f, ops::circular_shift(f, axis, s));
}

template <typename T>
Ccpe<T>::Ccpe(ContrastConfig cfg, std::int64_t input_h, std::int64_t input_w,
              ParameterStore<T>& store, Rng& rng, const std::string& prefix)
    : cfg_(std::move(cfg)) {
  cfg_.validate(input_h, input_w);
  const std::int64_t c = cfg_.base_channels, m = cfg_.mask_channels, k = cfg_.patch_stride;
  patch_.w = store.add(prefix + "patch.w", {k, k, cfg_.in_channels, c}, Init::kFanInUniform, rng);
  patch_.b = store.add(prefix + "patch.b", {c}, Init::kZeros, rng);
  auto make_branch = [&](Branch& br, const std::vector<int>& strides, const std::string& tag) {
    for (std::size_t i = 0; i < strides.size(); ++i) {
      const std::string p = prefix + tag + ".mask" + std::to_string(i);
      br.masks.push_back({store.add(p + ".w", {3, 3, c, m}, Init::kFanInUniform, rng),
                          store.add(p + ".b", {m}, Init::kZeros, rng)});
    }
    const std::int64_t fused_in = c + static_cast<std::int64_t>(strides.size()) * m;
    br.fuse = {store.add(prefix + tag + ".fuse.w", {3, 3, fused_in, c}, Init::kFanInUniform, rng),
               store.add(prefix + tag + ".fuse.b", {c}, Init::kZeros, rng)};
  };
  make_branch(h_, cfg_.strides_h, "h");
  make_branch(v_, cfg_.strides_v, "v");
  if (cfg_.final_norm) {
    norm_gamma_ = store.add(prefix + "norm.gamma", {cfg_.out_channels()}, Init::kOnes, rng);
    norm_beta_ = store.add(prefix + "norm.beta", {cfg_.out_channels()}, Init::kZeros, rng);
  }
}

template <typename T>
Tensor<T> Ccpe<T>::patch(const Tensor<T>& images) const {
  if (images.rank() != 4) throw ShapeError("ccpe: expected NHWC images");
  if (images.dim(1) % cfg_.patch_stride != 0 || images.dim(2) % cfg_.patch_stride != 0) {
    throw ShapeError("ccpe: image size " + shape_str(images.shape()) +
                     " not divisible by patch stride " + std::to_string(cfg_.patch_stride));
  }
  if (images.dim(3) != cfg_.in_channels) {
    throw ShapeError("ccpe: expected " + std::to_string(cfg_.in_channels) +
                     " input channels, got " + shape_str(images.shape()));
  }
  return ops::conv2d(images, patch_.w, patch_.b, cfg_.patch_stride, 0);
}

template <typename T>
Tensor<T> Ccpe<T>::contrast(const Tensor<T>& f, const Branch& br, const std::vector<int>& strides,
                            int axis) const {
  const std::int64_t extent = f.dim(axis);
  std::vector<Tensor<T>> parts{f};
  for (std::size_t i = 0; i < strides.size(); ++i) {
    if (strides[i] >= extent) {
      throw std::invalid_argument("ccpe: stride " + std::to_string(strides[i]) +
                                  " >= feature extent " + std::to_string(extent));
    }
    parts.push_back(ops::conv2d(contrast_difference(f, axis, strides[i]), br.masks[i].w,
                                br.masks[i].b, 1, 1));
  }
  return ops::conv2d(ops::concat_channels(parts), br.fuse.w, br.fuse.b, 1, 1);
}

template <typename T>
Tensor<T> Ccpe<T>::horizontal_contrast(const Tensor<T>& f) const {
  return contrast(f, h_, cfg_.strides_h, ops::kAxisWidth);
}

template <typename T>
Tensor<T> Ccpe<T>::vertical_contrast(const Tensor<T>& fh) const {
  return contrast(fh, v_, cfg_.strides_v, ops::kAxisHeight);
}

template <typename T>
Tensor<T> Ccpe<T>::embed(const Tensor<T>& images) const {
  auto f = patch(images);
  auto fv = vertical_contrast(horizontal_contrast(f));
  auto out = ops::concat_channels<T>({f, fv});
  if (cfg_.final_norm) out = ops::layer_norm(out, norm_gamma_, norm_beta_);
  return out;
}

template <typename T>
PatchEmbed<T>::PatchEmbed(int in_channels, int out_channels, int patch_stride,
                          ParameterStore<T>& store, Rng& rng, const std::string& prefix)
    : patch_stride_(patch_stride) {
  w_ = store.add(prefix + "w", {patch_stride, patch_stride, in_channels, out_channels},
                 Init::kFanInUniform, rng);
  b_ = store.add(prefix + "b", {out_channels}, Init::kZeros, rng);
  gamma_ = store.add(prefix + "norm.gamma", {out_channels}, Init::kOnes, rng);
  beta_ = store.add(prefix + "norm.beta", {out_channels}, Init::kZeros, rng);
}

template <typename T>
Tensor<T> PatchEmbed<T>::embed(const Tensor<T>& images) const {
  return ops::layer_norm(ops::conv2d(images, w_, b_, patch_stride_, 0), gamma_, beta_);
}

template class Ccpe<float>;
template class Ccpe<double>;
template class PatchEmbed<float>;
template class PatchEmbed<double>;
template Tensor<float> contrast_difference(const Tensor<float>&, int, std::int64_t);
template Tensor<double> contrast_difference(const Tensor<double>&, int, std::int64_t);

}  // namespace smokedet
