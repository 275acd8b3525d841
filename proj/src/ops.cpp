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

#include "ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace smokedet::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

std::size_t u(std::int64_t v) { return static_cast<std::size_t>(v); }

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range");
  }
  return axis;
}

// Product of dims before and after `axis`.
std::pair<std::int64_t, std::int64_t> outer_inner(const Shape& s, int axis) {
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[u(i)];
  for (std::size_t i = u(axis) + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

struct ConvGeom {
  std::int64_t n, h, w, cin, kh, kw, cout, ho, wo;
  int stride, pad;
  std::int64_t k() const { return kh * kw * cin; }
  std::int64_t m() const { return n * ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::int64_t K = g.k();
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t oy = 0; oy < g.ho; ++oy) {
      for (std::int64_t ox = 0; ox < g.wo; ++ox) {
        T* row = cols + ((b * g.ho + oy) * g.wo + ox) * K;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          std::int64_t iy = oy * g.stride - g.pad + ky;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            std::int64_t ix = ox * g.stride - g.pad + kx;
            T* dst = row + (ky * g.kw + kx) * g.cin;
            if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
              std::fill(dst, dst + g.cin, T(0));
            } else {
              const T* src = x + ((b * g.h + iy) * g.w + ix) * g.cin;
              std::copy(src, src + g.cin, dst);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const std::int64_t K = g.k();
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t oy = 0; oy < g.ho; ++oy) {
      for (std::int64_t ox = 0; ox < g.wo; ++ox) {
        const T* row = cols + ((b * g.ho + oy) * g.wo + ox) * K;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            const T* src = row + (ky * g.kw + kx) * g.cin;
            T* dst = dx + ((b * g.h + iy) * g.w + ix) * g.cin;
            for (std::int64_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, D df) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return make_result<T>(op, x.shape(), std::move(out), {x}, [xn, df](Node<T>& self) {
    if (!xn->requires_grad) return;
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * df(xn->value[i], self.value[i]);
    }
  });
}

enum class BinOp { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp kind, const char* op) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.size() == 1 && !same;
  const bool b_scalar = b.size() == 1 && !same;
  if (!same && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = u(numel(out_shape));
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T x = av[a_scalar ? 0 : i];
    T y = bv[b_scalar ? 0 : i];
    out[i] = kind == BinOp::kAdd ? x + y : kind == BinOp::kSub ? x - y : x * y;
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(op, out_shape, std::move(out), {a, b},
                        [an, bn, kind, a_scalar, b_scalar](Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (an->requires_grad) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        T g = self.grad[i];
        if (kind == BinOp::kMul) g *= bn->value[b_scalar ? 0 : i];
        ga[a_scalar ? 0 : i] += g;
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        T g = self.grad[i];
        if (kind == BinOp::kSub) g = -g;
        if (kind == BinOp::kMul) g *= an->value[a_scalar ? 0 : i];
        gb[b_scalar ? 0 : i] += g;
      }
    }
  });
}

template <typename T>
T sigmoid_value(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected NHWC input and [kh,kw,cin,cout] kernel, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3), 0, 0,
             stride, pad};
  if (w.dim(2) != g.cin) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " has " +
                     std::to_string(g.cin) + " channels but kernel " + shape_str(w.shape()) +
                     " expects " + std::to_string(w.dim(2)));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " does not match kernel " +
                     shape_str(w.shape()));
  }
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

  const std::int64_t M = g.m(), K = g.k();
  std::vector<T> cols;
  const T* cols_ptr = x.data().data();
  if (!g.pointwise()) {
    cols.resize(u(M * K));
    im2col(x.data().data(), g, cols.data());
    cols_ptr = cols.data();
  }
  std::vector<T> out(u(M * g.cout));
  MapMat<T> out_m(out.data(), M, g.cout);
  ConstMapMat<T> cols_m(cols_ptr, M, K);
  ConstMapMat<T> w_m(w.data().data(), K, g.cout);
  out_m.noalias() = cols_m * w_m;
  if (b.defined()) {
    auto bv = b.data();
    for (std::int64_t r = 0; r < M; ++r) {
      T* row = out.data() + r * g.cout;
      for (std::int64_t c = 0; c < g.cout; ++c) row[c] += bv[u(c)];
    }
  }
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_result<T>("conv2d", {g.n, g.ho, g.wo, g.cout}, std::move(out),
                        std::move(parents), [xn, wn, bn, g](Node<T>& self) {
    const std::int64_t M = g.m(), K = g.k();
    ConstMapMat<T> gout(self.grad.data(), M, g.cout);
    if (wn->requires_grad) {
      std::vector<T> cols;
      const T* cols_ptr = xn->value.data();
      if (!g.pointwise()) {
        cols.resize(u(M * K));
        im2col(xn->value.data(), g, cols.data());
        cols_ptr = cols.data();
      }
      ConstMapMat<T> cols_m(cols_ptr, M, K);
      MapMat<T> gw(wn->ensure_grad().data(), K, g.cout);
      gw.noalias() += cols_m.transpose() * gout;
    }
    if (bn && bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::int64_t r = 0; r < M; ++r) {
        const T* row = self.grad.data() + r * g.cout;
        for (std::int64_t c = 0; c < g.cout; ++c) gb[u(c)] += row[c];
      }
    }
    if (xn->requires_grad) {
      ConstMapMat<T> w_m(wn->value.data(), K, g.cout);
      auto& gx = xn->ensure_grad();
      if (g.pointwise()) {
        MapMat<T> gx_m(gx.data(), M, K);
        gx_m.noalias() += gout * w_m.transpose();
      } else {
        std::vector<T> dcols(u(M * K));
        MapMat<T> dcols_m(dcols.data(), M, K);
        dcols_m.noalias() = gout * w_m.transpose();
        col2im_add(dcols.data(), g, gx.data());
      }
    }
  });
}

template <typename T>
Tensor<T> circular_shift(const Tensor<T>& x, int axis, std::int64_t s) {
  axis = normalize_axis(axis, x.rank(), "circular_shift");
  const std::int64_t L = x.dim(axis);
  if (L < 1) throw ShapeError("circular_shift: empty axis");
  if (s < 0) throw ShapeError("circular_shift: shift must be non-negative");
  s %= L;
  auto [outer, inner] = outer_inner(x.shape(), axis);
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < L; ++j) {
      const T* src = xv.data() + (o * L + (j + s) % L) * inner;
      std::copy(src, src + inner, out.data() + (o * L + j) * inner);
    }
  }
  auto xn = x.node();
  return make_result<T>("circular_shift", x.shape(), std::move(out), {x},
                        [xn, outer, inner, L, s](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t j = 0; j < L; ++j) {
        const T* src = self.grad.data() + (o * L + j) * inner;
        T* dst = gx.data() + (o * L + (j + s) % L) * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  auto a3 = reshape(a, {1, a.dim(0), a.dim(1)});
  auto b3 = reshape(b, {1, b.dim(0), b.dim(1)});
  return reshape(bmm(a3, b3), {a.dim(0), b.dim(1)});
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::int64_t G = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<T> out(u(G * m * n));
  for (std::int64_t gi = 0; gi < G; ++gi) {
    ConstMapMat<T> am(a.data().data() + gi * m * k, m, k);
    MapMat<T> om(out.data() + gi * m * n, m, n);
    if (transpose_b) {
      ConstMapMat<T> bm(b.data().data() + gi * n * k, n, k);
      om.noalias() = am * bm.transpose();
    } else {
      ConstMapMat<T> bm(b.data().data() + gi * k * n, k, n);
      om.noalias() = am * bm;
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>("bmm", {G, m, n}, std::move(out), {a, b},
                        [an, bn, G, m, k, n, transpose_b](Node<T>& self) {
    for (std::int64_t gi = 0; gi < G; ++gi) {
      ConstMapMat<T> go(self.grad.data() + gi * m * n, m, n);
      if (an->requires_grad) {
        MapMat<T> ga(an->ensure_grad().data() + gi * m * k, m, k);
        if (transpose_b) {
          ConstMapMat<T> bm(bn->value.data() + gi * n * k, n, k);
          ga.noalias() += go * bm;
        } else {
          ConstMapMat<T> bm(bn->value.data() + gi * k * n, k, n);
          ga.noalias() += go * bm.transpose();
        }
      }
      if (bn->requires_grad) {
        ConstMapMat<T> am(an->value.data() + gi * m * k, m, k);
        if (transpose_b) {
          MapMat<T> gb(bn->ensure_grad().data() + gi * n * k, n, k);
          gb.noalias() += go.transpose() * am;
        } else {
          MapMat<T> gb(bn->ensure_grad().data() + gi * k * n, k, n);
          gb.noalias() += am.transpose() * go;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() < 1 || x.dim(-1) < 1) throw ShapeError("softmax_lastdim: empty last dim");
  const std::int64_t C = x.dim(-1);
  const std::int64_t rows = x.size() / C;
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * C;
    T* o = out.data() + r * C;
    T mx = *std::max_element(in, in + C);
    T total = 0;
    for (std::int64_t c = 0; c < C; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::int64_t c = 0; c < C; ++c) o[c] /= total;
  }
  auto xn = x.node();
  return make_result<T>("softmax", x.shape(), std::move(out), {x},
                        [xn, rows, C](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * C;
      const T* g = self.grad.data() + r * C;
      T dot = 0;
      for (std::int64_t c = 0; c < C; ++c) dot += g[c] * y[c];
      T* dx = gx.data() + r * C;
      for (std::int64_t c = 0; c < C; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const std::int64_t C = x.dim(-1);
  if (gamma.size() != C || beta.size() != C) {
    throw ShapeError("layer_norm: gamma/beta length must equal last dim of " +
                     shape_str(x.shape()));
  }
  const std::int64_t rows = x.size() / C;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(u(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * C;
    T mean = 0;
    for (std::int64_t c = 0; c < C; ++c) mean += in[c];
    mean /= T(C);
    T var = 0;
    for (std::int64_t c = 0; c < C; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= T(C);
    T is = T(1) / std::sqrt(var + T(eps));
    inv_std[u(r)] = is;
    for (std::int64_t c = 0; c < C; ++c) {
      T h = (in[c] - mean) * is;
      xhat[u(r * C + c)] = h;
      out[u(r * C + c)] = gv[u(c)] * h + bv[u(c)];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                        [xn, gn, bn, rows, C, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Node<T>& self) {
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * C;
      const T* h = xhat.data() + r * C;
      if (gn->requires_grad) {
        auto& gg = gn->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) gg[u(c)] += g[c] * h[c];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) gb[u(c)] += g[c];
      }
      if (xn->requires_grad) {
        T mean_d = 0, mean_dh = 0;
        for (std::int64_t c = 0; c < C; ++c) {
          T d = g[c] * gn->value[u(c)];
          mean_d += d;
          mean_dh += d * h[c];
        }
        mean_d /= T(C);
        mean_dh /= T(C);
        T* dx = xn->ensure_grad().data() + r * C;
        for (std::int64_t c = 0; c < C; ++c) {
          T d = g[c] * gn->value[u(c)];
          dx[c] += inv_std[u(r)] * (d - mean_d - h[c] * mean_dh);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::kAdd, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::kSub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, "sigmoid", [](T v) { return sigmoid_value(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v * sigmoid_value(v); },
      [](T v, T) {
        T s = sigmoid_value(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(kInvSqrt2))); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2))) +
               v * T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts[0].rank();
  axis = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[u(axis)] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (int i = 0; ok && i < rank; ++i) {
      if (i != axis && p.dim(i) != parts[0].dim(i)) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(parts[0].shape()) +
                       " and " + shape_str(p.shape()));
    }
    out_shape[u(axis)] += p.dim(axis);
  }
  auto [outer, inner] = outer_inner(out_shape, axis);
  const std::int64_t out_row = out_shape[u(axis)] * inner;
  std::vector<T> out(u(numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::vector<typename Tensor<T>::NodePtr> nodes;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t chunk = p.dim(axis) * inner;
    auto pv = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(pv.data() + o * chunk, pv.data() + (o + 1) * chunk,
                out.data() + o * out_row + off);
    }
    offsets.push_back(off);
    nodes.push_back(p.node());
    off += chunk;
  }
  return make_result<T>("concat", out_shape, std::move(out), parts,
                        [nodes, offsets, outer, out_row](Node<T>& self) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (!nodes[k]->requires_grad) continue;
      auto& g = nodes[k]->ensure_grad();
      const std::int64_t chunk = static_cast<std::int64_t>(g.size()) / outer;
      for (std::int64_t o = 0; o < outer; ++o) {
        const T* src = self.grad.data() + o * out_row + offsets[k];
        T* dst = g.data() + o * chunk;
        for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>("reshape", std::move(shape), std::move(out), {x},
                        [xn](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank) throw ShapeError("permute: rank mismatch");
  std::vector<bool> used(u(rank), false);
  for (int p : perm) {
    if (p < 0 || p >= rank || used[u(p)]) throw ShapeError("permute: invalid permutation");
    used[u(p)] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::int64_t> in_strides(u(rank), 1);
  for (int i = rank - 2; i >= 0; --i) in_strides[u(i)] = in_strides[u(i + 1)] * in_shape[u(i + 1)];
  Shape out_shape(u(rank));
  std::vector<std::int64_t> src_strides(u(rank));
  for (int i = 0; i < rank; ++i) {
    out_shape[u(i)] = in_shape[u(perm[u(i)])];
    src_strides[u(i)] = in_strides[u(perm[u(i)])];
  }
  // map[out_flat] = in_flat
  const std::int64_t n = x.size();
  std::vector<std::int64_t> map(u(n));
  std::vector<std::int64_t> idx(u(rank), 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    map[u(o)] = src;
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[u(d)] < out_shape[u(d)]) {
        src += src_strides[u(d)];
        break;
      }
      src -= src_strides[u(d)] * (out_shape[u(d)] - 1);
      idx[u(d)] = 0;
    }
  }
  auto xv = x.data();
  std::vector<T> out(u(n));
  for (std::int64_t o = 0; o < n; ++o) out[u(o)] = xv[u(map[u(o)])];
  auto xn = x.node();
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                        [xn, map = std::move(map)](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t o = 0; o < map.size(); ++o) g[u(map[o])] += self.grad[o];
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const std::int64_t L = x.dim(axis);
  if (start < 0 || length < 0 || start + length > L) {
    throw ShapeError("slice: range out of bounds for " + shape_str(x.shape()));
  }
  auto [outer, inner] = outer_inner(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[u(axis)] = length;
  std::vector<T> out(u(outer * length * inner));
  auto xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = xv.data() + (o * L + start) * inner;
    std::copy(src, src + length * inner, out.data() + o * length * inner);
  }
  auto xn = x.node();
  return make_result<T>("slice", std::move(out_shape), std::move(out), {x},
                        [xn, outer, inner, L, start, length](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* src = self.grad.data() + o * length * inner;
      T* dst = g.data() + (o * L + start) * inner;
      for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, std::int64_t pad_h, std::int64_t pad_w) {
  if (x.rank() != 4 || pad_h < 0 || pad_w < 0) {
    throw ShapeError("pad_bottom_right: expected NHWC input and non-negative padding");
  }
  if (pad_h == 0 && pad_w == 0) return x;
  const std::int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::int64_t Hp = H + pad_h, Wp = W + pad_w;
  std::vector<T> out(u(N * Hp * Wp * C), T(0));
  auto xv = x.data();
  for (std::int64_t b = 0; b < N; ++b) {
    for (std::int64_t y = 0; y < H; ++y) {
      const T* src = xv.data() + ((b * H + y) * W) * C;
      std::copy(src, src + W * C, out.data() + ((b * Hp + y) * Wp) * C);
    }
  }
  auto xn = x.node();
  return make_result<T>("pad", {N, Hp, Wp, C}, std::move(out), {x},
                        [xn, N, H, W, C, Hp, Wp](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::int64_t b = 0; b < N; ++b) {
      for (std::int64_t y = 0; y < H; ++y) {
        const T* src = self.grad.data() + ((b * Hp + y) * Wp) * C;
        T* dst = g.data() + ((b * H + y) * W) * C;
        for (std::int64_t i = 0; i < W * C; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("upsample_nearest2x: expected NHWC input");
  const std::int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  std::vector<T> out(u(N * 4 * H * W * C));
  auto xv = x.data();
  for (std::int64_t b = 0; b < N; ++b) {
    for (std::int64_t y = 0; y < 2 * H; ++y) {
      for (std::int64_t xx = 0; xx < 2 * W; ++xx) {
        const T* src = xv.data() + ((b * H + y / 2) * W + xx / 2) * C;
        std::copy(src, src + C, out.data() + ((b * 2 * H + y) * 2 * W + xx) * C);
      }
    }
  }
  auto xn = x.node();
  return make_result<T>("upsample", {N, 2 * H, 2 * W, C}, std::move(out), {x},
                        [xn, N, H, W, C](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::int64_t b = 0; b < N; ++b) {
      for (std::int64_t y = 0; y < 2 * H; ++y) {
        for (std::int64_t xx = 0; xx < 2 * W; ++xx) {
          const T* src = self.grad.data() + ((b * 2 * H + y) * 2 * W + xx) * C;
          T* dst = g.data() + ((b * H + y / 2) * W + xx / 2) * C;
          for (std::int64_t c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto xn = x.node();
  return make_result<T>("sum", {}, {total}, {x}, [xn](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected [N,C], got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1);
  std::vector<T> out(rows.size() * u(C));
  auto xv = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= N) throw ShapeError("gather_rows: row index out of range");
    std::copy(xv.data() + rows[r] * C, xv.data() + (rows[r] + 1) * C, out.data() + r * u(C));
  }
  auto xn = x.node();
  return make_result<T>("gather_rows", {static_cast<std::int64_t>(rows.size()), C},
                        std::move(out), {x}, [xn, rows, C](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::int64_t c = 0; c < C; ++c) g[u(rows[r] * C + c)] += self.grad[r * u(C) + u(c)];
    }
  });
}

template <typename T>
Tensor<T> bce_with_logits_sum(const Tensor<T>& logits, const std::vector<T>& targets,
                              const std::vector<T>& weights) {
  const std::size_t n = u(logits.size());
  if (targets.size() != n || weights.size() != n) {
    throw ShapeError("bce_with_logits_sum: targets/weights length must match logits " +
                     shape_str(logits.shape()));
  }
  auto z = logits.data();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == T(0)) continue;
    T zi = z[i];
    total += weights[i] *
             (std::max(zi, T(0)) - zi * targets[i] + std::log1p(std::exp(-std::abs(zi))));
  }
  auto ln = logits.node();
  return make_result<T>("bce_with_logits", {}, {total}, {logits},
                        [ln, targets, weights](Node<T>& self) {
    auto& g = ln->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (weights[i] == T(0)) continue;
      g[i] += self.grad[0] * weights[i] * (sigmoid_value(ln->value[i]) - targets[i]);
    }
  });
}

std::array<double, 4> decode_box(double dx, double dy, double dw, double dh,
                                 const CellAnchor& a) {
  const double cx = (a.grid_x + 0.5 + dx) * a.stride;
  const double cy = (a.grid_y + 0.5 + dy) * a.stride;
  const double w = std::exp(std::clamp(dw, -kMaxLogSize, kMaxLogSize)) * a.stride;
  const double h = std::exp(std::clamp(dh, -kMaxLogSize, kMaxLogSize)) * a.stride;
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

template <typename T>
Tensor<T> box_iou_loss_sum(const Tensor<T>& raw, const std::vector<CellAnchor>& anchors,
                           const std::vector<double>& targets) {
  if (raw.rank() != 2 || raw.dim(1) != 4 || u(raw.dim(0)) != anchors.size() ||
      targets.size() != anchors.size() * 4) {
    throw ShapeError("box_iou_loss_sum: expected raw [n,4] with n anchors and n targets, got " +
                     shape_str(raw.shape()));
  }
  const std::size_t n = anchors.size();
  auto rv = raw.data();
  // Per-row gradient of IoU with respect to the raw outputs.
  std::vector<T> d_iou(n * 4, T(0));
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const double dx = rv[r * 4], dy = rv[r * 4 + 1], dw = rv[r * 4 + 2], dh = rv[r * 4 + 3];
    auto [x1, y1, x2, y2] = decode_box(dx, dy, dw, dh, anchors[r]);
    const double tx1 = targets[r * 4], ty1 = targets[r * 4 + 1];
    const double tx2 = targets[r * 4 + 2], ty2 = targets[r * 4 + 3];
    const double iw = std::min(x2, tx2) - std::max(x1, tx1);
    const double ih = std::min(y2, ty2) - std::max(y1, ty1);
    if (iw <= 0 || ih <= 0) {
      total += 1.0;
      continue;
    }
    const double inter = iw * ih;
    const double pw = x2 - x1, ph = y2 - y1;
    const double uni = pw * ph + (tx2 - tx1) * (ty2 - ty1) - inter;
    const double iou = inter / uni;
    total += 1.0 - iou;
    const double d_inter = (uni + inter) / (uni * uni);
    const double d_area = -inter / (uni * uni);
    const double gx1 = d_inter * (x1 > tx1 ? -ih : 0.0) + d_area * (-ph);
    const double gx2 = d_inter * (x2 < tx2 ? ih : 0.0) + d_area * ph;
    const double gy1 = d_inter * (y1 > ty1 ? -iw : 0.0) + d_area * (-pw);
    const double gy2 = d_inter * (y2 < ty2 ? iw : 0.0) + d_area * pw;
    const double s = anchors[r].stride;
    const bool w_free = std::abs(dw) < kMaxLogSize;
    const bool h_free = std::abs(dh) < kMaxLogSize;
    d_iou[r * 4] = static_cast<T>((gx1 + gx2) * s);
    d_iou[r * 4 + 1] = static_cast<T>((gy1 + gy2) * s);
    d_iou[r * 4 + 2] = static_cast<T>(w_free ? (gx2 - gx1) * 0.5 * pw : 0.0);
    d_iou[r * 4 + 3] = static_cast<T>(h_free ? (gy2 - gy1) * 0.5 * ph : 0.0);
  }
  auto rn = raw.node();
  return make_result<T>("box_iou_loss", {}, {static_cast<T>(total)}, {raw},
                        [rn, d_iou = std::move(d_iou)](Node<T>& self) {
    auto& g = rn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[0] * d_iou[i];
  });
}

template <typename T>
Tensor<T> corrupt_grad(const Tensor<T>& x, T factor) {
  return unary(
      x, "corrupt_grad", [](T v) { return v; }, [factor](T, T) { return factor; });
}

#define SMOKEDET_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,    \
                            int);                                                          \
  template Tensor<T> circular_shift(const Tensor<T>&, int, std::int64_t);                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                        \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                    \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                double);                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                            \
  template Tensor<T> silu(const Tensor<T>&);                                               \
  template Tensor<T> gelu(const Tensor<T>&);                                               \
  template Tensor<T> exp(const Tensor<T>&);                                                \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                   \
  template Tensor<T> slice(const Tensor<T>&, int, std::int64_t, std::int64_t);             \
  template Tensor<T> pad_bottom_right(const Tensor<T>&, std::int64_t, std::int64_t);       \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::int64_t>&);      \
  template Tensor<T> bce_with_logits_sum(const Tensor<T>&, const std::vector<T>&,          \
                                         const std::vector<T>&);                           \
  template Tensor<T> box_iou_loss_sum(const Tensor<T>&, const std::vector<CellAnchor>&,    \
                                      const std::vector<double>&);                         \
  template Tensor<T> corrupt_grad(const Tensor<T>&, T);

SMOKEDET_INSTANTIATE_OPS(float)
SMOKEDET_INSTANTIATE_OPS(double)

#undef SMOKEDET_INSTANTIATE_OPS

}  // namespace smokedet::ops
