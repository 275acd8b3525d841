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

#ifndef SMOKEDET_CCPE_HPP_
#define SMOKEDET_CCPE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "params.hpp"
#include "tensor.hpp"

namespace smokedet {

/// Stride set used for both contrast directions at full input size.
inline const std::vector<int> kFullContrastStrides{1, 2, 4, 8, 16, 32, 64, 128};

struct ContrastConfig {
  std::vector<int> strides_h = kFullContrastStrides;
  std::vector<int> strides_v = kFullContrastStrides;
  int in_channels = 3;
  int base_channels = 48;
  int patch_stride = 4;
  int mask_channels = 1;
  bool final_norm = true;

  int out_channels() const { return 2 * base_channels; }
  /// Rejects strides that reach the feature-map extent of an input_h x input_w image.
  void validate(std::int64_t input_h, std::int64_t input_w) const;
};

/// Analytic parameter counts.
std::int64_t ccpe_param_count(const ContrastConfig& cfg);
std::int64_t vanilla_patch_embed_param_count(int in_channels, int out_channels);
/// Multiply-accumulate plus elementwise op counts for one image.
double ccpe_flops(const ContrastConfig& cfg, std::int64_t h, std::int64_t w);
double vanilla_patch_embed_flops(int in_channels, int out_channels, std::int64_t h,
                                 std::int64_t w);

/// Cross contrast patch embedding: a stride-4 patch conv F, then cascaded
/// horizontal and vertical multi-stride contrast branches, output concat(F, F^V).
template <typename T>
class Ccpe {
 public:
  Ccpe(ContrastConfig cfg, std::int64_t input_h, std::int64_t input_w, ParameterStore<T>& store,
       Rng& rng, const std::string& prefix = "ccpe.");

  const ContrastConfig& config() const { return cfg_; }

  Tensor<T> patch(const Tensor<T>& images) const;
  Tensor<T> horizontal_contrast(const Tensor<T>& f) const;
  Tensor<T> vertical_contrast(const Tensor<T>& fh) const;
  Tensor<T> embed(const Tensor<T>& images) const;

  struct ConvParams {
    Tensor<T> w, b;
  };
  struct Branch {
    std::vector<ConvParams> masks;
    ConvParams fuse;
  };
  const ConvParams& patch_params() const { return patch_; }
  const Branch& branch_h() const { return h_; }
  const Branch& branch_v() const { return v_; }

 private:
  Tensor<T> contrast(const Tensor<T>& f, const Branch& br, const std::vector<int>& strides,
                     int axis) const;

  ContrastConfig cfg_;
  ConvParams patch_;
  Branch h_, v_;
  Tensor<T> norm_gamma_, norm_beta_;
};

/// Contrast mask input F - shift(F, s) along `axis`, without stride validation.
template <typename T>
Tensor<T> contrast_difference(const Tensor<T>& f, int axis, std::int64_t s);

/// Plain stride-4 conv + layer norm embedding that CCPE replaces.
template <typename T>
class PatchEmbed {
 public:
  PatchEmbed(int in_channels, int out_channels, int patch_stride, ParameterStore<T>& store,
             Rng& rng, const std::string& prefix = "patch.");
  Tensor<T> embed(const Tensor<T>& images) const;

 private:
  int patch_stride_;
  Tensor<T> w_, b_, gamma_, beta_;
};

}  // namespace smokedet

#endif  // SMOKEDET_CCPE_HPP_
