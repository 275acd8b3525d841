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

#ifndef SMOKEDET_OPS_HPP_
#define SMOKEDET_OPS_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace smokedet::ops {

// NHWC axes.
inline constexpr int kAxisHeight = 1;
inline constexpr int kAxisWidth = 2;

/// 2D convolution over NHWC input with a [kh,kw,cin,cout] kernel. `b` may be
/// an undefined tensor for a bias-free conv.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad);

/// out[..., j, ...] = x[..., (j + s) mod L, ...] along `axis`.
template <typename T>
Tensor<T> circular_shift(const Tensor<T>& x, int axis, std::int64_t s);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product of [G,m,k] and [G,k,n] (or [G,n,k] when `transpose_b`).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

// Elementwise binaries accept equal shapes or a single-element operand.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  return concat(parts, -1);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length);

/// Zero-pads an NHWC tensor at the bottom and right edges.
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, std::int64_t pad_h, std::int64_t pad_w);

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Rows of a [N,C] tensor selected by index; backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& rows);

/// sum_i weight_i * BCE(sigmoid(logit_i), target_i), numerically stable.
template <typename T>
Tensor<T> bce_with_logits_sum(const Tensor<T>& logits, const std::vector<T>& targets,
                              const std::vector<T>& weights);

/// Grid cell and stride a raw box prediction is decoded relative to.
struct CellAnchor {
  double grid_x = 0;
  double grid_y = 0;
  double stride = 1;
};

inline constexpr double kMaxLogSize = 10.0;

/// Decodes raw [n,4] (dx,dy,dw,dh) at `anchors` and returns sum(1 - IoU) against
/// `targets` (n x4 x1,y1,x2,y2 flattened).
template <typename T>
Tensor<T> box_iou_loss_sum(const Tensor<T>& raw, const std::vector<CellAnchor>& anchors,
                           const std::vector<double>& targets);

/// Plain-value decode shared by inference and the loss.
std::array<double, 4> decode_box(double dx, double dy, double dw, double dh,
                                 const CellAnchor& anchor);

/// Identity forward whose backward multiplies the gradient by `factor`.
/// Only used to prove the gradient checker notices a broken backward.
template <typename T>
Tensor<T> corrupt_grad(const Tensor<T>& x, T factor);

}  // namespace smokedet::ops

#endif  // SMOKEDET_OPS_HPP_
