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

#include "assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ops.hpp"

namespace smokedet {

namespace {
std::size_t u(std::int64_t v) { return static_cast<std::size_t>(v); }
}  // namespace

LocationLayout LocationLayout::for_input(std::int64_t input_h, std::int64_t input_w) {
  LocationLayout l;
  for (int s : kFeatureStrides) l.scales.push_back({input_h / s, input_w / s, s});
  return l;
}

std::int64_t LocationLayout::per_image() const {
  std::int64_t n = 0;
  for (const auto& s : scales) n += s.h * s.w;
  return n;
}

std::int64_t LocationLayout::offset(std::size_t scale) const {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < scale; ++i) n += scales[i].h * scales[i].w;
  return n;
}

ops::CellAnchor LocationLayout::anchor(std::int64_t location) const {
  for (const auto& s : scales) {
    if (location < s.h * s.w) {
      return {double(location % s.w), double(location / s.w), double(s.stride)};
    }
    location -= s.h * s.w;
  }
  throw std::out_of_range("location outside layout");
}

Targets assign_positives(const std::vector<std::vector<GtBox>>& gts, const LocationLayout& layout) {
  Targets t;
  t.layout = layout;
  t.batch = static_cast<std::int64_t>(gts.size());
  const std::int64_t L = layout.per_image();
  t.pos.assign(u(t.batch * L), 0);
  t.box.assign(u(t.batch * L), {0, 0, 0, 0});
  t.cls.assign(u(t.batch * L), 0);
  t.per_image_pos.assign(u(t.batch), 0);
  std::vector<double> best_dist(u(L));
  std::vector<int> owner(u(L));
  for (std::int64_t b = 0; b < t.batch; ++b) {
    std::fill(best_dist.begin(), best_dist.end(), std::numeric_limits<double>::infinity());
    std::fill(owner.begin(), owner.end(), -1);
    const auto& boxes = gts[u(b)];
    for (std::size_t si = 0; si < layout.scales.size(); ++si) {
      const auto& sg = layout.scales[si];
      const std::int64_t base = layout.offset(si);
      for (std::size_t g = 0; g < boxes.size(); ++g) {
        const auto& gt = boxes[g];
        if (!(gt.x1 < gt.x2 && gt.y1 < gt.y2)) {
          throw std::invalid_argument("assign_positives: degenerate ground-truth box");
        }
        const auto ci = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::floor(gt.cy() / sg.stride)), 0, sg.h - 1);
        const auto cj = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::floor(gt.cx() / sg.stride)), 0, sg.w - 1);
        for (std::int64_t i = std::max<std::int64_t>(ci - 1, 0); i <= std::min(ci + 1, sg.h - 1); ++i) {
          for (std::int64_t j = std::max<std::int64_t>(cj - 1, 0); j <= std::min(cj + 1, sg.w - 1); ++j) {
            const std::int64_t loc = base + i * sg.w + j;
            const double dx = (j + 0.5) * sg.stride - gt.cx();
            const double dy = (i + 0.5) * sg.stride - gt.cy();
            const double dist = dx * dx + dy * dy;
            if (dist < best_dist[u(loc)]) {
              best_dist[u(loc)] = dist;
              owner[u(loc)] = static_cast<int>(g);
            }
          }
        }
      }
    }
    for (std::int64_t loc = 0; loc < L; ++loc) {
      const int g = owner[u(loc)];
      if (g < 0) continue;
      const std::size_t idx = u(b * L + loc);
      t.pos[idx] = 1;
      t.box[idx] = boxes[u(g)].as_array();
      t.cls[idx] = boxes[u(g)].cls;
      ++t.per_image_pos[u(b)];
    }
  }
  return t;
}

const char* sampling_mode_name(SamplingMode m) {
  switch (m) {
    case SamplingMode::kNone: return "none";
    case SamplingMode::kRandom: return "random";
    case SamplingMode::kOhem: return "ohem";
    case SamplingMode::kSnsm: return "snsm";
  }
  return "?";
}

SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "none") return SamplingMode::kNone;
  if (s == "random") return SamplingMode::kRandom;
  if (s == "ohem") return SamplingMode::kOhem;
  if (s == "snsm") return SamplingMode::kSnsm;
  throw std::invalid_argument("unknown sampling mode '" + s + "' (none|random|ohem|snsm)");
}

std::int64_t MaskSet::count(const std::vector<std::uint8_t>& m) const {
  std::int64_t n = 0;
  for (auto v : m) n += v;
  return n;
}

std::int64_t MaskSet::count_on_image(const std::vector<std::uint8_t>& m, std::int64_t image) const {
  const std::int64_t L = layout.per_image();
  std::int64_t n = 0;
  for (std::int64_t l = 0; l < L; ++l) n += m[u(image * L + l)];
  return n;
}

std::vector<std::uint8_t> MaskSet::scale_view(const std::vector<std::uint8_t>& m,
                                              std::size_t scale) const {
  const std::int64_t L = layout.per_image();
  const auto& sg = layout.scales.at(scale);
  const std::int64_t off = layout.offset(scale), hw = sg.h * sg.w;
  std::vector<std::uint8_t> out(u(batch * hw));
  for (std::int64_t b = 0; b < batch; ++b) {
    std::copy_n(m.begin() + b * L + off, hw, out.begin() + b * hw);
  }
  return out;
}

void MaskSet::validate() const {
  const std::int64_t L = layout.per_image();
  const std::size_t n = u(batch * L);
  if (pos.size() != n || init_neg.size() != n || neg1.size() != n || neg2.size() != n ||
      image_positive.size() != u(batch)) {
    throw std::logic_error("mask set: buffer sizes do not match batch layout");
  }
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t l = 0; l < L; ++l) {
      const std::size_t i = u(b * L + l);
      if (init_neg[i] != 1 - pos[i]) throw std::logic_error("mask set: init_neg != 1 - pos");
      if (pos[i] && (neg1[i] || neg2[i])) {
        throw std::logic_error("mask set: negative sample overlaps a positive location");
      }
      if (image_positive[u(b)] && neg2[i]) {
        throw std::logic_error("mask set: mask_neg2 set on a positive image");
      }
      if (!image_positive[u(b)] && neg1[i]) {
        throw std::logic_error("mask set: mask_neg1 set on a negative image");
      }
      if (!image_positive[u(b)] && pos[i]) {
        throw std::logic_error("mask set: positive location on a negative image");
      }
    }
  }
}

MaskSet base_masks(const Targets& targets, const std::vector<bool>& image_positive) {
  if (image_positive.size() != u(targets.batch)) {
    throw std::invalid_argument("masks: positivity flags do not match batch size");
  }
  MaskSet m;
  m.layout = targets.layout;
  m.batch = targets.batch;
  m.pos = targets.pos;
  m.init_neg.resize(m.pos.size());
  for (std::size_t i = 0; i < m.pos.size(); ++i) m.init_neg[i] = 1 - m.pos[i];
  m.neg1.assign(m.pos.size(), 0);
  m.neg2.assign(m.pos.size(), 0);
  m.image_positive = image_positive;
  for (bool p : image_positive) (p ? m.num_pos_images : m.num_neg_images)++;
  return m;
}

std::int64_t scaled_count(double alpha, std::int64_t n) {
  return static_cast<std::int64_t>(std::floor(alpha * static_cast<double>(n) + 1e-9));
}

std::vector<std::int64_t> top_k_by_score(std::vector<std::int64_t> candidates,
                                         const std::vector<double>& scores, std::int64_t k) {
  k = std::min<std::int64_t>(k, static_cast<std::int64_t>(candidates.size()));
  auto better = [&](std::int64_t a, std::int64_t b) {
    if (scores[u(a)] != scores[u(b)]) return scores[u(a)] > scores[u(b)];
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), better);
  candidates.resize(u(k));
  return candidates;
}

namespace {

void split_negatives(MaskSet& m, const std::vector<std::int64_t>& chosen) {
  const std::int64_t L = m.layout.per_image();
  for (auto idx : chosen) {
    (m.image_positive[u(idx / L)] ? m.neg1 : m.neg2)[u(idx)] = 1;
  }
}

std::vector<std::int64_t> negatives_where(const MaskSet& m, bool on_positive_images,
                                          bool on_negative_images) {
  const std::int64_t L = m.layout.per_image();
  std::vector<std::int64_t> out;
  for (std::int64_t b = 0; b < m.batch; ++b) {
    const bool pi = m.image_positive[u(b)];
    if ((pi && !on_positive_images) || (!pi && !on_negative_images)) continue;
    for (std::int64_t l = 0; l < L; ++l) {
      if (m.init_neg[u(b * L + l)]) out.push_back(b * L + l);
    }
  }
  return out;
}

void check_scores(const MaskSet& m, const std::vector<double>& scores) {
  if (scores.size() != m.pos.size()) {
    throw std::invalid_argument("masks: confidence scores not aligned with mask layout");
  }
}

}  // namespace

MaskSet build_snsm_masks(const Targets& targets, const std::vector<bool>& image_positive,
                         const std::vector<double>& conf_scores, const SamplingConfig& cfg,
                         Rng& rng) {
  if (cfg.alpha1 <= 0 || cfg.alpha2 <= 0) throw std::invalid_argument("snsm: alphas must be > 0");
  MaskSet m = base_masks(targets, image_positive);
  check_scores(m, conf_scores);
  const std::int64_t L = m.layout.per_image();
  std::int64_t p_batch = 0;
  for (auto p : targets.per_image_pos) p_batch += p;

  if (p_batch > 0) {
    for (std::int64_t b = 0; b < m.batch; ++b) {
      if (!m.image_positive[u(b)]) continue;
      std::vector<std::int64_t> pool;
      for (std::int64_t l = 0; l < L; ++l) {
        if (m.init_neg[u(b * L + l)]) pool.push_back(b * L + l);
      }
      const std::int64_t k = std::min<std::int64_t>(
          scaled_count(cfg.alpha1, targets.per_image_pos[u(b)]), static_cast<std::int64_t>(pool.size()));
      for (auto i : sample_without_replacement(static_cast<std::int64_t>(pool.size()), k, rng)) {
        m.neg1[u(pool[u(i)])] = 1;
      }
    }
  }
  const std::int64_t k2 = p_batch > 0 ? scaled_count(cfg.alpha2, p_batch) : cfg.floor * m.num_neg_images;
  for (auto idx : top_k_by_score(negatives_where(m, false, true), conf_scores, k2)) {
    m.neg2[u(idx)] = 1;
  }
  return m;
}

MaskSet sample_random(const Targets& targets, const std::vector<bool>& image_positive,
                      const SamplingConfig& cfg, Rng& rng) {
  MaskSet m = base_masks(targets, image_positive);
  std::int64_t p_batch = 0;
  for (auto p : targets.per_image_pos) p_batch += p;
  const auto pool = negatives_where(m, true, true);
  const std::int64_t want = p_batch > 0 ? scaled_count(cfg.ratio, p_batch) : cfg.floor * m.batch;
  const std::int64_t k = std::min<std::int64_t>(want, static_cast<std::int64_t>(pool.size()));
  std::vector<std::int64_t> chosen;
  for (auto i : sample_without_replacement(static_cast<std::int64_t>(pool.size()), k, rng)) {
    chosen.push_back(pool[u(i)]);
  }
  split_negatives(m, chosen);
  return m;
}

MaskSet sample_ohem(const Targets& targets, const std::vector<bool>& image_positive,
                    const std::vector<double>& conf_scores, const SamplingConfig& cfg) {
  MaskSet m = base_masks(targets, image_positive);
  check_scores(m, conf_scores);
  std::int64_t p_batch = 0;
  for (auto p : targets.per_image_pos) p_batch += p;
  const std::int64_t k = p_batch > 0 ? scaled_count(cfg.ratio, p_batch) : cfg.floor * m.batch;
  split_negatives(m, top_k_by_score(negatives_where(m, true, true), conf_scores, k));
  return m;
}

MaskSet sample_all(const Targets& targets, const std::vector<bool>& image_positive) {
  MaskSet m = base_masks(targets, image_positive);
  split_negatives(m, negatives_where(m, true, true));
  return m;
}

MaskSet build_masks(const Targets& targets, const std::vector<bool>& image_positive,
                    const std::vector<double>& conf_scores, const SamplingConfig& cfg, Rng& rng) {
  switch (cfg.mode) {
    case SamplingMode::kNone: return sample_all(targets, image_positive);
    case SamplingMode::kRandom: return sample_random(targets, image_positive, cfg, rng);
    case SamplingMode::kOhem: return sample_ohem(targets, image_positive, conf_scores, cfg);
    case SamplingMode::kSnsm:
      return build_snsm_masks(targets, image_positive, conf_scores, cfg, rng);
  }
  throw std::logic_error("unhandled sampling mode");
}

template <typename T>
std::vector<double> flatten_conf(const std::vector<HeadOutput<T>>& head) {
  if (head.empty()) return {};
  const std::int64_t B = head[0].conf.dim(0);
  std::vector<double> out;
  for (std::int64_t b = 0; b < B; ++b) {
    for (const auto& level : head) {
      const std::int64_t hw = level.conf.dim(1) * level.conf.dim(2);
      auto v = level.conf.data();
      for (std::int64_t i = 0; i < hw; ++i) out.push_back(v[u(b * hw + i)]);
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> flatten_levels(const std::vector<HeadOutput<T>>& head, Tensor<T> HeadOutput<T>::*field) {
  std::vector<Tensor<T>> parts;
  const std::int64_t B = (head[0].*field).dim(0);
  const std::int64_t C = (head[0].*field).dim(3);
  for (const auto& level : head) {
    const auto& t = level.*field;
    parts.push_back(ops::reshape(t, {B, t.dim(1) * t.dim(2), C}));
  }
  auto all = ops::concat(parts, 1);
  return ops::reshape(all, {all.dim(0) * all.dim(1), C});
}

}  // namespace

template <typename T>
LossTerms<T> compute_losses(const std::vector<HeadOutput<T>>& head, const Targets& targets,
                            const MaskSet& masks) {
  masks.validate();
  if (masks.pos != targets.pos) throw std::logic_error("losses: mask_pos differs from targets");
  const std::int64_t L = masks.layout.per_image();
  const std::int64_t N = masks.batch * L;
  auto conf = flatten_levels(head, &HeadOutput<T>::conf);
  auto cls = flatten_levels(head, &HeadOutput<T>::cls);
  auto box = flatten_levels(head, &HeadOutput<T>::box);
  if (conf.dim(0) != N) {
    throw std::logic_error("losses: head outputs have " + std::to_string(conf.dim(0)) +
                           " locations, masks have " + std::to_string(N));
  }
  const std::int64_t nc = cls.dim(1);

  std::vector<T> conf_t(u(N), T(0)), conf_w(u(N), T(0));
  std::vector<std::int64_t> pos_rows;
  for (std::int64_t i = 0; i < N; ++i) {
    const auto k = u(i);
    if (masks.pos[k]) {
      conf_t[k] = T(1);
      pos_rows.push_back(i);
    }
    if (masks.pos[k] || masks.neg1[k] || masks.neg2[k]) conf_w[k] = T(1);
  }
  const auto P = static_cast<std::int64_t>(pos_rows.size());

  std::vector<T> cls_t(u(P * nc), T(0)), cls_w(u(P * nc), T(1));
  std::vector<ops::CellAnchor> anchors;
  std::vector<double> box_t;
  for (std::int64_t r = 0; r < P; ++r) {
    const auto row = pos_rows[u(r)];
    const int c = targets.cls[u(row)];
    if (c < 0 || c >= nc) throw std::invalid_argument("losses: class target out of range");
    cls_t[u(r * nc + c)] = T(1);
    anchors.push_back(masks.layout.anchor(row % L));
    for (double v : targets.box[u(row)]) box_t.push_back(v);
  }

  LossTerms<T> out;
  auto l_conf = ops::bce_with_logits_sum(conf, conf_t, conf_w);
  auto l_cls = ops::bce_with_logits_sum(ops::gather_rows(cls, pos_rows), cls_t, cls_w);
  auto l_box = ops::box_iou_loss_sum(ops::gather_rows(box, pos_rows), anchors, box_t);
  const double norm = 1.0 / static_cast<double>(std::max<std::int64_t>(P, 1));
  out.conf = l_conf.item() * norm;
  out.cls = l_cls.item() * norm;
  out.box = l_box.item() * norm;
  out.num_pos = P;
  auto total = ops::add(ops::add(l_conf, l_cls), ops::scale(l_box, T(kBoxLossWeight)));
  out.total = ops::scale(total, T(norm));
  return out;
}

template std::vector<double> flatten_conf(const std::vector<HeadOutput<float>>&);
template std::vector<double> flatten_conf(const std::vector<HeadOutput<double>>&);
template LossTerms<float> compute_losses(const std::vector<HeadOutput<float>>&, const Targets&,
                                         const MaskSet&);
template LossTerms<double> compute_losses(const std::vector<HeadOutput<double>>&, const Targets&,
                                          const MaskSet&);

}  // namespace smokedet
