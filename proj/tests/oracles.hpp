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

// Independent reference implementations for tests and the acceptance run.
// Everything here is written with plain loops over std::vector so it shares
// no code path with the kernel under test.
#ifndef SMOKEDET_TESTS_ORACLES_HPP_
#define SMOKEDET_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "assign.hpp"
#include "ccpe.hpp"
#include "metrics.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace oracle {

using smokedet::Rng;
using smokedet::Tensor;

inline std::vector<double> values(const Tensor<double>& t) {
  return {t.data().begin(), t.data().end()};
}

inline Tensor<double> random_tensor(smokedet::Shape shape, Rng& rng, double lo = -1,
                                    double hi = 1, bool requires_grad = false) {
  std::vector<double> v(static_cast<std::size_t>(smokedet::numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from_data(std::move(shape), std::move(v), requires_grad);
}

// NHWC x [n,h,w,ci], HWIO w [kh,kw,ci,co].
struct Map4 {
  std::int64_t n = 0, h = 0, w = 0, c = 0;
  std::vector<double> v;
  double& at(std::int64_t a, std::int64_t i, std::int64_t j, std::int64_t k) {
    return v[static_cast<std::size_t>(((a * h + i) * w + j) * c + k)];
  }
  double at(std::int64_t a, std::int64_t i, std::int64_t j, std::int64_t k) const {
    return v[static_cast<std::size_t>(((a * h + i) * w + j) * c + k)];
  }
};

inline Map4 as_map(const Tensor<double>& t) {
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), values(t)};
}

inline Map4 naive_conv2d(const Map4& x, const std::vector<double>& w, std::int64_t kh,
                         std::int64_t kw, std::int64_t co, const std::vector<double>& b,
                         int stride, int pad) {
  Map4 y;
  y.n = x.n;
  y.h = (x.h + 2 * pad - kh) / stride + 1;
  y.w = (x.w + 2 * pad - kw) / stride + 1;
  y.c = co;
  y.v.assign(static_cast<std::size_t>(y.n * y.h * y.w * y.c), 0.0);
  for (std::int64_t n = 0; n < y.n; ++n)
    for (std::int64_t i = 0; i < y.h; ++i)
      for (std::int64_t j = 0; j < y.w; ++j)
        for (std::int64_t o = 0; o < co; ++o) {
          double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
          for (std::int64_t a = 0; a < kh; ++a)
            for (std::int64_t c = 0; c < kw; ++c) {
              const std::int64_t yi = i * stride - pad + a, xj = j * stride - pad + c;
              if (yi < 0 || yi >= x.h || xj < 0 || xj >= x.w) continue;
              for (std::int64_t ci = 0; ci < x.c; ++ci) {
                acc += x.at(n, yi, xj, ci) *
                       w[static_cast<std::size_t>(((a * kw + c) * x.c + ci) * co + o)];
              }
            }
          y.at(n, i, j, o) = acc;
        }
  return y;
}

inline Map4 conv_with(const Map4& x, const Tensor<double>& w, const Tensor<double>& b,
                      int stride, int pad) {
  return naive_conv2d(x, values(w), w.dim(0), w.dim(1), w.dim(3),
                      b.defined() ? values(b) : std::vector<double>{}, stride, pad);
}

inline Map4 concat(const std::vector<Map4>& parts) {
  Map4 y = parts[0];
  y.c = 0;
  for (const auto& p : parts) y.c += p.c;
  y.v.assign(static_cast<std::size_t>(y.n * y.h * y.w * y.c), 0.0);
  for (std::int64_t n = 0; n < y.n; ++n)
    for (std::int64_t i = 0; i < y.h; ++i)
      for (std::int64_t j = 0; j < y.w; ++j) {
        std::int64_t off = 0;
        for (const auto& p : parts) {
          for (std::int64_t k = 0; k < p.c; ++k) y.at(n, i, j, off + k) = p.at(n, i, j, k);
          off += p.c;
        }
      }
  return y;
}

// F - F_s with F_s[j] = F[(j + s) mod L] along width (horizontal) or height.
inline Map4 shifted_difference(const Map4& f, std::int64_t s, bool horizontal) {
  Map4 d = f;
  for (std::int64_t n = 0; n < f.n; ++n)
    for (std::int64_t i = 0; i < f.h; ++i)
      for (std::int64_t j = 0; j < f.w; ++j)
        for (std::int64_t k = 0; k < f.c; ++k) {
          const double shifted = horizontal ? f.at(n, i, (j + s) % f.w, k)
                                            : f.at(n, (i + s) % f.h, j, k);
          d.at(n, i, j, k) = f.at(n, i, j, k) - shifted;
        }
  return d;
}

inline Map4 contrast_branch(const Map4& f, const smokedet::Ccpe<double>::Branch& br,
                            const std::vector<int>& strides, bool horizontal) {
  std::vector<Map4> parts{f};
  for (std::size_t i = 0; i < strides.size(); ++i) {
    parts.push_back(
        conv_with(shifted_difference(f, strides[i], horizontal), br.masks[i].w, br.masks[i].b, 1, 1));
  }
  return conv_with(concat(parts), br.fuse.w, br.fuse.b, 1, 1);
}

// Scalar transcription of the contrast embedding using the module's weights.
// gamma/beta empty: no final norm.
inline Map4 ccpe_reference(const smokedet::Ccpe<double>& m, const Tensor<double>& images,
                           const std::vector<double>& gamma, const std::vector<double>& beta) {
  const auto& cfg = m.config();
  Map4 f = conv_with(as_map(images), m.patch_params().w, m.patch_params().b, cfg.patch_stride, 0);
  Map4 fh = contrast_branch(f, m.branch_h(), cfg.strides_h, true);
  Map4 fv = contrast_branch(fh, m.branch_v(), cfg.strides_v, false);
  Map4 out = concat({f, fv});
  if (gamma.empty()) return out;
  for (std::int64_t r = 0; r < out.n * out.h * out.w; ++r) {
    double* row = out.v.data() + r * out.c;
    double mean = 0, var = 0;
    for (std::int64_t k = 0; k < out.c; ++k) mean += row[k];
    mean /= double(out.c);
    for (std::int64_t k = 0; k < out.c; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= double(out.c);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::int64_t k = 0; k < out.c; ++k) {
      row[k] = gamma[static_cast<std::size_t>(k)] * (row[k] - mean) * inv +
               beta[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- ranking metrics ----

inline double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0;
  for (double p : pos)
    for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return s / (double(pos.size()) * double(neg.size()));
}

// Scores on a grid so ties are common; grid size drawn per set.
inline std::vector<double> tied_scores(std::size_t n, Rng& rng) {
  static const std::uint64_t grids[] = {2, 3, 10, 50, 1000, 1000000};
  const std::uint64_t q = grids[rng.uniform_int(6)];
  std::vector<double> v(n);
  for (auto& x : v) x = double(rng.uniform_int(q + 1)) / double(q);
  return v;
}

// ---- average precision ----

inline double iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy;
  const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// AP for detections visited in `order`: each takes the highest-IoU unmatched GT
// of its image (lowest GT index on equal IoU) when IoU >= thresh.
inline double ap_for_order(const smokedet::metrics::EvalSet& set, const std::vector<std::size_t>& order,
                           double thresh) {
  std::size_t n_gt = 0;
  std::map<std::string, std::vector<bool>> used;
  for (const auto& [id, g] : set.ground_truth) {
    n_gt += g.size();
    used[id].assign(g.size(), false);
  }
  if (n_gt == 0) return 0.0;
  double ap = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t k : order) {
    const auto& d = set.detections[k];
    ++seen;
    auto it = set.ground_truth.find(d.image_id);
    if (it == set.ground_truth.end()) continue;
    int pick = -1;
    double best = -1;
    for (std::size_t g = 0; g < it->second.size(); ++g) {
      if (used[d.image_id][g]) continue;
      const double v = iou(d.box, it->second[g].as_array());
      if (v >= thresh && v > best) {
        best = v;
        pick = int(g);
      }
    }
    if (pick < 0) continue;
    used[d.image_id][std::size_t(pick)] = true;
    ++tp;
    ap += (double(tp) / double(seen)) / double(n_gt);
  }
  return ap;
}

struct ApOracle {
  double canonical = 0;  // order fixed by score, image id, box
  double lowest = 0, highest = 0;
  std::size_t orderings = 0;
};

// Enumerates every visiting order consistent with descending score.
inline ApOracle exhaustive_ap(const smokedet::metrics::EvalSet& set, double thresh) {
  const auto& dets = set.detections;
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (dets[a].image_id != dets[b].image_id) return dets[a].image_id < dets[b].image_id;
    for (int k = 0; k < 4; ++k) {
      if (dets[a].box[k] != dets[b].box[k]) return dets[a].box[k] < dets[b].box[k];
    }
    return a < b;
  });
  ApOracle r;
  r.canonical = ap_for_order(set, idx, thresh);
  r.lowest = r.highest = r.canonical;
  std::vector<std::pair<std::size_t, std::size_t>> groups;  // [begin, end) of equal scores
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && dets[idx[j]].score == dets[idx[i]].score) ++j;
    groups.emplace_back(i, j);
    i = j;
  }
  std::vector<std::size_t> cur = idx;
  for (auto& [b, e] : groups) std::sort(cur.begin() + b, cur.begin() + e);
  // Odometer over per-group permutations.
  while (true) {
    const double ap = ap_for_order(set, cur, thresh);
    r.lowest = std::min(r.lowest, ap);
    r.highest = std::max(r.highest, ap);
    ++r.orderings;
    std::size_t g = 0;
    for (; g < groups.size(); ++g) {
      auto [b, e] = groups[g];
      if (std::next_permutation(cur.begin() + b, cur.begin() + e)) break;
    }
    if (g == groups.size()) break;
  }
  return r;
}

// <= 5 images, <= 6 GTs, <= 10 detections; scores tie at most 4 ways.
inline smokedet::metrics::EvalSet random_ap_instance(Rng& rng) {
  smokedet::metrics::EvalSet set;
  const int n_img = 1 + int(rng.uniform_int(5));
  for (int i = 0; i < n_img; ++i) {
    const std::string id = "img" + std::to_string(i);
    set.image_meta[id] = {"v0", i, false, std::nullopt};
    set.ground_truth[id] = {};
  }
  auto random_box = [&] {
    const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
    return std::array<double, 4>{x, y, x + rng.uniform(4, 30), y + rng.uniform(4, 30)};
  };
  const int n_gt = int(rng.uniform_int(7));
  for (int g = 0; g < n_gt; ++g) {
    const std::string id = "img" + std::to_string(rng.uniform_int(std::uint64_t(n_img)));
    auto b = random_box();
    set.ground_truth[id].push_back({b[0], b[1], b[2], b[3], 0});
    set.image_meta[id].is_positive = true;
  }
  const int n_det = int(rng.uniform_int(11));
  std::map<double, int> score_uses;
  for (int d = 0; d < n_det; ++d) {
    smokedet::metrics::Detection det;
    det.image_id = "img" + std::to_string(rng.uniform_int(std::uint64_t(n_img)));
    const auto& gts = set.ground_truth[det.image_id];
    if (!gts.empty() && rng.bernoulli(0.7)) {
      auto g = gts[rng.uniform_int(gts.size())].as_array();
      const double jx = rng.uniform(-8, 8), jy = rng.uniform(-8, 8);
      det.box = {g[0] + jx, g[1] + jy, g[2] + jx + rng.uniform(-3, 3), g[3] + jy + rng.uniform(-3, 3)};
      if (det.box[2] <= det.box[0] + 1) det.box[2] = det.box[0] + 2;
      if (det.box[3] <= det.box[1] + 1) det.box[3] = det.box[1] + 2;
    } else {
      det.box = random_box();
    }
    double s;
    do {
      s = double(1 + rng.uniform_int(8)) / 8.0;
    } while (score_uses[s] >= 4);
    ++score_uses[s];
    det.score = s;
    set.detections.push_back(det);
  }
  return set;
}

// ---- negative sampling ----

struct SamplingCase {
  std::vector<std::vector<smokedet::GtBox>> gts;
  std::vector<bool> positive;
  smokedet::Targets targets;
  std::vector<double> scores;
  smokedet::SamplingConfig cfg;
  std::uint64_t seed = 0;
};

inline SamplingCase random_sampling_case(Rng& rng, std::int64_t input) {
  SamplingCase c;
  const auto layout = smokedet::LocationLayout::for_input(input, input);
  const int batch = 2 + int(rng.uniform_int(7));
  const bool all_negative = rng.bernoulli(0.15);
  for (int b = 0; b < batch; ++b) {
    std::vector<smokedet::GtBox> boxes;
    if (!all_negative && rng.bernoulli(0.5)) {
      const int n = 1 + int(rng.uniform_int(3));
      for (int k = 0; k < n; ++k) {
        const double w = rng.uniform(6, double(input) / 3), h = rng.uniform(6, double(input) / 3);
        const double x = rng.uniform(0, double(input) - w), y = rng.uniform(0, double(input) - h);
        boxes.push_back({x, y, x + w, y + h, 0});
      }
    }
    c.positive.push_back(!boxes.empty());
    c.gts.push_back(std::move(boxes));
  }
  c.targets = smokedet::assign_positives(c.gts, layout);
  c.scores = tied_scores(std::size_t(batch * layout.per_image()), rng);
  static const double a1[] = {0.5, 1, 3, 10};
  static const double a2[] = {1, 4, 20, 190};
  c.cfg.alpha1 = a1[rng.uniform_int(4)];
  c.cfg.alpha2 = a2[rng.uniform_int(4)];
  c.cfg.floor = 1 + std::int64_t(rng.uniform_int(20));
  c.seed = rng.next_u64();
  return c;
}

inline std::int64_t floor_mul(double a, std::int64_t n) {
  return std::int64_t(std::floor(a * double(n) + 1e-9));
}

// Returns an empty string when every invariant holds, else the first violation.
inline std::string check_snsm(const SamplingCase& c) {
  using smokedet::MaskSet;
  Rng r1(c.seed, 7), r2(c.seed, 7);
  MaskSet m = smokedet::build_snsm_masks(c.targets, c.positive, c.scores, c.cfg, r1);
  MaskSet again = smokedet::build_snsm_masks(c.targets, c.positive, c.scores, c.cfg, r2);
  if (m.neg1 != again.neg1 || m.neg2 != again.neg2 || m.pos != again.pos) {
    return "same seed produced different masks";
  }
  const std::int64_t L = m.layout.per_image();
  const std::size_t n = m.pos.size();
  std::int64_t p_batch = 0, bn = 0;
  for (std::int64_t b = 0; b < m.batch; ++b) {
    if (!c.positive[std::size_t(b)]) ++bn;
    for (std::int64_t l = 0; l < L; ++l) p_batch += m.pos[std::size_t(b * L + l)];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (m.init_neg[i] != 1 - m.pos[i]) return "init_neg != 1 - pos";
    if (m.pos[i] && (m.neg1[i] || m.neg2[i])) return "negative overlaps positive";
    const bool img_pos = c.positive[i / std::size_t(L)];
    if (img_pos && m.neg2[i]) return "neg2 on a positive image";
    if (!img_pos && m.neg1[i]) return "neg1 on a negative image";
  }
  for (std::int64_t b = 0; b < m.batch; ++b) {
    std::int64_t p = 0, avail = 0, got = 0;
    for (std::int64_t l = 0; l < L; ++l) {
      const std::size_t i = std::size_t(b * L + l);
      p += m.pos[i];
      avail += 1 - m.pos[i];
      got += m.neg1[i];
    }
    const std::int64_t want =
        c.positive[std::size_t(b)] && p_batch > 0 ? std::min(floor_mul(c.cfg.alpha1, p), avail) : 0;
    if (got != want) {
      return "image " + std::to_string(b) + ": |neg1| " + std::to_string(got) + " != " +
             std::to_string(want);
    }
  }
  // Sort oracle over the negative-image pool.
  std::vector<std::int64_t> pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (!c.positive[i / std::size_t(L)] && !m.pos[i]) pool.push_back(std::int64_t(i));
  }
  std::sort(pool.begin(), pool.end(), [&](std::int64_t a, std::int64_t b) {
    if (c.scores[std::size_t(a)] != c.scores[std::size_t(b)]) {
      return c.scores[std::size_t(a)] > c.scores[std::size_t(b)];
    }
    return a < b;
  });
  const std::int64_t k = std::min<std::int64_t>(
      p_batch > 0 ? floor_mul(c.cfg.alpha2, p_batch) : c.cfg.floor * bn, std::int64_t(pool.size()));
  std::vector<std::uint8_t> expect(n, 0);
  for (std::int64_t i = 0; i < k; ++i) expect[std::size_t(pool[std::size_t(i)])] = 1;
  if (m.neg2 != expect) return "neg2 differs from the sorted-prefix oracle (K=" + std::to_string(k) + ")";
  double lo = INFINITY, hi = -INFINITY;
  for (auto i : pool) {
    const double s = c.scores[std::size_t(i)];
    if (m.neg2[std::size_t(i)]) {
      lo = std::min(lo, s);
    } else {
      hi = std::max(hi, s);
    }
  }
  if (k > 0 && std::int64_t(pool.size()) > k && lo < hi) return "a harder negative was left out";
  return {};
}

}  // namespace oracle

#endif  // SMOKEDET_TESTS_ORACLES_HPP_
