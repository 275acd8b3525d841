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

#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace smokedet {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {
std::size_t u(std::int64_t v) { return static_cast<std::size_t>(v); }
}  // namespace

void write_ppm(const fs::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    return t;
  };
  if (token() != "P6") throw std::runtime_error(path.string() + " is not a binary PPM (P6)");
  Image img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw std::runtime_error("");
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PPM header (expected 8-bit P6)");
  }
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error(path.string() + ": empty image");
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  return img;
}

Image Dataset::load_pixels(const ImageRecord& r) const {
  if (r.pixels) return *r.pixels;
  if (r.image_path.empty()) throw std::runtime_error("record has neither pixels nor image_path");
  return read_ppm(root / r.image_path);
}

double Plume::alpha(double x, double y) const {
  double density = 0;
  for (const auto& p : puffs) {
    const double dx = (x - p.cx) / p.sx, dy = (y - p.cy) / p.sy;
    density += p.weight * std::exp(-0.5 * (dx * dx + dy * dy));
  }
  return opacity * std::min(1.0, density);
}

std::optional<GtBox> plume_box(const Plume& plume, int width, int height) {
  int x1 = width, y1 = height, x2 = -1, y2 = -1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (plume.alpha(x + 0.5, y + 0.5) > kBoxAlphaThreshold) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
    }
  }
  if (x2 < 0) return std::nullopt;
  return GtBox{double(x1), double(y1), double(x2 + 1), double(y2 + 1), 0};
}

namespace {

using Rgb = std::array<double, 3>;

struct Canvas {
  int w, h;
  std::vector<Rgb> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_) {}
  Rgb& at(int x, int y) { return px[static_cast<std::size_t>(y) * w + x]; }
  void blend(int x, int y, const Rgb& c, double a) {
    auto& p = at(x, y);
    for (int k = 0; k < 3; ++k) p[k] = (1 - a) * p[k] + a * c[k];
  }
};

// Smooth lattice noise in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int cells) : cells_(cells), lattice_(u((cells + 2) * (cells + 2))) {
    for (auto& v : lattice_) v = rng.uniform(-1, 1);
  }
  double at(double fx, double fy) const {  // fx, fy in [0,1]
    const double gx = fx * cells_, gy = fy * cells_;
    const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
    const double tx = gx - ix, ty = gy - iy;
    const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
    auto L = [&](int x, int y) { return lattice_[u(y * (cells_ + 2) + x)]; };
    const double a = L(ix, iy) + sx * (L(ix + 1, iy) - L(ix, iy));
    const double b = L(ix, iy + 1) + sx * (L(ix + 1, iy + 1) - L(ix, iy + 1));
    return a + sy * (b - a);
  }

 private:
  int cells_;
  std::vector<double> lattice_;
};

struct Blob {
  double cx, cy, sx, sy, opacity;
  Rgb color;
};

struct Shape2D {
  bool ridge;  // triangle from the horizon, else rectangle
  double x0, x1, top, bottom;
  Rgb color;
};

struct VideoScene {
  double horizon;
  Rgb sky_top, sky_bottom, ground_near, ground_far;
  std::unique_ptr<ValueNoise> coarse, fine;
  std::vector<Shape2D> clutter;
  std::vector<Blob> clouds;
  std::optional<Blob> fog;  // sx unused: horizontal band
  std::vector<Blob> bright;
  double cloud_drift;
  std::vector<Plume> plumes;  // at full growth; shape scaled per frame
};

Rgb rgb(Rng& r, Range a, Range b, Range c) {
  return {r.uniform(a.lo, a.hi), r.uniform(b.lo, b.hi), r.uniform(c.lo, c.hi)};
}

VideoScene make_scene(const SceneSpec& spec, Rng& rng, bool positive) {
  const double S = spec.image_size;
  VideoScene sc;
  sc.horizon = S * rng.uniform(0.38, 0.55);
  sc.sky_top = rgb(rng, {0.30, 0.50}, {0.50, 0.68}, {0.78, 0.95});
  sc.sky_bottom = rgb(rng, {0.62, 0.78}, {0.72, 0.85}, {0.85, 0.97});
  sc.ground_far = rgb(rng, {0.30, 0.45}, {0.35, 0.50}, {0.22, 0.35});
  sc.ground_near = rgb(rng, {0.16, 0.30}, {0.20, 0.36}, {0.10, 0.22});
  if (!spec.background_gradient) {
    sc.sky_top = sc.sky_bottom;
    sc.ground_near = sc.ground_far;
  }
  sc.coarse = std::make_unique<ValueNoise>(rng, 6);
  sc.fine = std::make_unique<ValueNoise>(rng, 20);
  if (spec.background_clutter) {
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n; ++i) {
      Shape2D s;
      s.ridge = rng.bernoulli(0.5);
      const double cx = rng.uniform(0, S), half = S * rng.uniform(0.05, s.ridge ? 0.3 : 0.08);
      s.x0 = cx - half;
      s.x1 = cx + half;
      s.top = sc.horizon - S * rng.uniform(0.02, s.ridge ? 0.12 : 0.08);
      s.bottom = s.ridge ? sc.horizon + 1 : sc.horizon + S * rng.uniform(0.02, 0.1);
      const double g = rng.uniform(0.15, 0.5);
      s.color = {g * rng.uniform(0.8, 1.1), g, g * rng.uniform(0.8, 1.2)};
      sc.clutter.push_back(s);
    }
  }
  if (spec.distractor_clouds) {
    const int n = static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n; ++i) {
      const double w = rng.uniform(0.9, 1.0);
      sc.clouds.push_back({rng.uniform(0, S), rng.uniform(0.05 * S, 0.9 * sc.horizon),
                           S * rng.uniform(0.07, 0.14), S * rng.uniform(0.03, 0.06),
                           rng.uniform(0.3, 0.7), {w, w, w}});
    }
  }
  if (spec.distractor_fog && rng.bernoulli(0.4)) {
    const double g = rng.uniform(0.8, 0.95);
    sc.fog = Blob{0, sc.horizon + S * rng.uniform(-0.04, 0.04), 0, S * rng.uniform(0.04, 0.08),
                  rng.uniform(0.15, 0.35), {g, g, g}};
  }
  if (spec.distractor_bright && rng.bernoulli(0.3)) {
    sc.bright.push_back({rng.uniform(0, S), rng.uniform(0, S), S * rng.uniform(0.01, 0.03),
                         S * rng.uniform(0.01, 0.03), rng.uniform(0.5, 0.9), {1.0, 0.97, 0.85}});
  }
  sc.cloud_drift = rng.uniform(-0.8, 0.8);
  if (positive) {
    const int lo = spec.plume_count[0], hi = std::max(spec.plume_count[0], spec.plume_count[1]);
    const int n = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    for (int i = 0; i < n; ++i) {
      Plume p;
      const double x0 = S * rng.uniform(0.15, 0.85);
      const double y0 = rng.uniform(sc.horizon + 0.05 * S, 0.92 * S);
      const double rise = S * rng.uniform(0.12, 0.28);
      const double drift = S * rng.uniform(-0.12, 0.12);
      const double sigma = rng.uniform(spec.plume_sigma.lo, spec.plume_sigma.hi);
      const double aspect = rng.uniform(0.8, 1.2);
      constexpr int kPuffs = 6;
      for (int m = 0; m < kPuffs; ++m) {
        const double t = double(m) / (kPuffs - 1);
        p.puffs.push_back({x0 + drift * t * t + rng.uniform(-1.0, 1.0) * sigma * 0.3,
                           y0 - rise * t, sigma * (1 + 1.2 * t), sigma * (1 + 0.8 * t) * aspect,
                           1.0 - 0.5 * t});
      }
      p.opacity = rng.uniform(spec.plume_opacity.lo, spec.plume_opacity.hi);
      const double g = rng.uniform(0.72, 0.88);
      p.color = {g * rng.uniform(0.95, 1.05), g, g * rng.uniform(0.95, 1.08)};
      sc.plumes.push_back(p);
    }
  }
  return sc;
}

// Plume shape at a given growth in (0, 1]: puffs contract toward the source.
Plume grown(const Plume& p, double growth) {
  Plume g = p;
  const auto& src = p.puffs.front();
  for (auto& q : g.puffs) {
    q.cx = src.cx + (q.cx - src.cx) * growth;
    q.cy = src.cy + (q.cy - src.cy) * growth;
    q.sx *= 0.6 + 0.4 * growth;
    q.sy *= 0.6 + 0.4 * growth;
  }
  return g;
}

void draw_blob(Canvas& c, const Blob& b) {
  for (int y = 0; y < c.h; ++y) {
    for (int x = 0; x < c.w; ++x) {
      const double dx = (x + 0.5 - b.cx) / b.sx, dy = (y + 0.5 - b.cy) / b.sy;
      const double a = b.opacity * std::exp(-0.5 * (dx * dx + dy * dy));
      if (a > 1e-4) c.blend(x, y, b.color, a);
    }
  }
}

Image render_frame(const SceneSpec& spec, const VideoScene& sc, std::int64_t frame,
                   const std::vector<Plume>& plumes, Rng& frame_rng) {
  const int S = spec.image_size;
  Canvas c(S, S);
  const double light = 1.0 + 0.02 * frame_rng.normal();
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double fx = (x + 0.5) / S, fy = (y + 0.5) / S;
      Rgb p;
      double noise = 0;
      if (spec.background_noise) noise = 0.7 * sc.coarse->at(fx, fy) + 0.3 * sc.fine->at(fx, fy);
      if (y < sc.horizon) {
        const double t = (y + 0.5) / sc.horizon;
        for (int k = 0; k < 3; ++k) {
          p[k] = sc.sky_top[k] + t * (sc.sky_bottom[k] - sc.sky_top[k]) + 0.02 * noise;
        }
      } else {
        const double t = (y + 0.5 - sc.horizon) / (S - sc.horizon);
        for (int k = 0; k < 3; ++k) {
          p[k] = sc.ground_far[k] + t * (sc.ground_near[k] - sc.ground_far[k]) + 0.09 * noise;
        }
      }
      c.at(x, y) = p;
    }
  }
  for (const auto& s : sc.clutter) {
    for (int y = std::max(0, int(s.top)); y < std::min(S, int(std::ceil(s.bottom))); ++y) {
      for (int x = std::max(0, int(s.x0)); x < std::min(S, int(std::ceil(s.x1))); ++x) {
        bool inside = true;
        if (s.ridge) {
          const double mid = 0.5 * (s.x0 + s.x1), half = 0.5 * (s.x1 - s.x0);
          const double top_here = s.top + (s.bottom - s.top) * std::abs(x + 0.5 - mid) / half;
          inside = y + 0.5 >= top_here;
        }
        if (inside) c.at(x, y) = s.color;
      }
    }
  }
  if (sc.fog) {
    for (int y = 0; y < S; ++y) {
      const double dy = (y + 0.5 - sc.fog->cy) / sc.fog->sy;
      const double a = sc.fog->opacity * std::exp(-0.5 * dy * dy);
      for (int x = 0; x < S; ++x) c.blend(x, y, sc.fog->color, a);
    }
  }
  for (Blob b : sc.clouds) {
    b.cx += sc.cloud_drift * double(frame);
    draw_blob(c, b);
  }
  for (const auto& p : plumes) {
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const double a = p.alpha(x + 0.5, y + 0.5);
        if (a > 1e-4) c.blend(x, y, p.color, a);
      }
    }
  }
  for (const auto& b : sc.bright) draw_blob(c, b);
  Image img{S, S, std::vector<std::uint8_t>(static_cast<std::size_t>(S) * S * 3)};
  for (std::size_t i = 0; i < c.px.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const double v = std::clamp(c.px[i][k] * light, 0.0, 1.0);
      img.rgb[i * 3 + u(k)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Positive frame count per video; positives are the trailing frames.
std::vector<std::int64_t> allocate_positives(const std::vector<std::int64_t>& lengths,
                                             std::int64_t total_pos, Rng& rng) {
  const auto V = static_cast<std::int64_t>(lengths.size());
  std::vector<std::int64_t> pos(u(V), 0);
  std::int64_t n = 0;
  for (auto l : lengths) n += l;
  if (total_pos <= 0) return pos;
  if (total_pos >= n) return lengths;
  std::vector<std::int64_t> order(u(V));
  for (std::int64_t i = 0; i < V; ++i) order[u(i)] = i;
  for (std::int64_t i = V - 1; i > 0; --i) {
    std::swap(order[u(i)], order[u(static_cast<std::int64_t>(rng.uniform_int(u(i + 1))))]);
  }
  const std::int64_t typical = std::max<std::int64_t>(1, lengths[0] * 8 / 10);
  std::int64_t pv = std::clamp<std::int64_t>((total_pos + typical - 1) / typical, 1,
                                             std::max<std::int64_t>(V - 1, 1));
  auto capacity = [&](std::int64_t k) {
    std::int64_t c = 0;
    for (std::int64_t i = 0; i < k; ++i) c += lengths[u(order[u(i)])];
    return c;
  };
  while (capacity(pv) < total_pos && pv < V) ++pv;
  std::int64_t remaining = total_pos;
  for (std::int64_t i = 0; i < pv; ++i) {
    const auto v = u(order[u(i)]);
    pos[v] = std::min(lengths[v], total_pos / pv + (i < total_pos % pv ? 1 : 0));
    remaining -= pos[v];
  }
  for (std::int64_t i = 0; remaining > 0 && i < pv; ++i) {
    const auto v = u(order[u(i)]);
    const auto extra = std::min(remaining, lengths[v] - pos[v]);
    pos[v] += extra;
    remaining -= extra;
  }
  return pos;
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a_hex(const std::string& bytes, std::uint64_t seed) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes, seed)));
  return buf;
}

std::string record_to_json_line(const ImageRecord& r) {
  ordered_json j;
  j["image_path"] = r.image_path;
  j["width"] = r.width;
  j["height"] = r.height;
  json boxes = json::array();
  for (const auto& b : r.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  j["boxes"] = boxes;
  j["video_id"] = r.video_id;
  j["frame_index"] = r.frame_index;
  j["is_positive"] = r.is_positive;
  j["fire_start_index"] = r.fire_start_index ? json(*r.fire_start_index) : json(nullptr);
  return j.dump();
}

GeneratedDataset generate_synthetic_dataset(const SceneSpec& spec, std::int64_t n,
                                            double positive_fraction, const fs::path& out_dir) {
  if (n < 1) throw std::invalid_argument("gendata: number of images must be >= 1");
  if (!(positive_fraction >= 0 && positive_fraction <= 1)) {
    throw std::invalid_argument("gendata: positive fraction must be in [0, 1]");
  }
  if (spec.image_size < 8) throw std::invalid_argument("gendata: image size too small");
  if (!(spec.plume_opacity.lo >= 0 && spec.plume_opacity.hi < 1)) {
    throw std::invalid_argument("gendata: plume opacity must lie in [0, 1)");
  }
  if (spec.video_length < 1) throw std::invalid_argument("gendata: video length must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const std::int64_t L = spec.video_length;
  const std::int64_t V = (n + L - 1) / L;
  std::vector<std::int64_t> lengths(u(V), L);
  lengths.back() = n - (V - 1) * L;
  Rng alloc_rng(spec.seed, 0);
  const auto total_pos = std::llround(double(n) * positive_fraction);
  const auto pos_frames = allocate_positives(lengths, total_pos, alloc_rng);

  GeneratedDataset out;
  std::vector<Image> images;
  for (std::int64_t v = 0; v < V; ++v) {
    Rng scene_rng(spec.seed, 1 + u(v));
    const bool positive_video = pos_frames[u(v)] > 0;
    const VideoScene sc = make_scene(spec, scene_rng, positive_video);
    const std::int64_t fire_start = lengths[u(v)] - pos_frames[u(v)];
    char vid[32];
    std::snprintf(vid, sizeof vid, "v%04lld", static_cast<long long>(v));
    for (std::int64_t f = 0; f < lengths[u(v)]; ++f) {
      Rng frame_rng = scene_rng.child(u(f));
      std::vector<Plume> plumes;
      ImageRecord r;
      if (positive_video && f >= fire_start) {
        const double growth = std::min(1.0, 0.5 + 0.15 * double(f - fire_start));
        for (const auto& p : sc.plumes) {
          Plume g = grown(p, growth);
          if (auto box = plume_box(g, spec.image_size, spec.image_size)) r.boxes.push_back(*box);
          plumes.push_back(std::move(g));
        }
      }
      char path[64];
      std::snprintf(path, sizeof path, "images/%s_f%02lld.ppm", vid, static_cast<long long>(f));
      r.image_path = path;
      r.width = spec.image_size;
      r.height = spec.image_size;
      r.video_id = vid;
      r.frame_index = f;
      r.is_positive = !r.boxes.empty();
      if (positive_video) r.fire_start_index = fire_start;
      Image img = render_frame(spec, sc, f, plumes, frame_rng);
      write_ppm(out_dir / r.image_path, img);
      out.records.push_back(std::move(r));
    }
  }
  std::string annotations;
  for (const auto& r : out.records) annotations += record_to_json_line(r) + "\n";
  {
    std::ofstream a(out_dir / "annotations.jsonl", std::ios::binary | std::ios::trunc);
    if (!a) throw std::runtime_error("cannot write " + (out_dir / "annotations.jsonl").string());
    a << annotations;
  }
  std::uint64_t h = fnv1a(annotations);
  for (const auto& r : out.records) h = fnv1a(read_file(out_dir / r.image_path), h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  out.digest = buf;
  return out;
}

namespace {

const std::set<std::string> kRecordKeys{"image_path", "width",       "height",
                                        "boxes",      "video_id",    "frame_index",
                                        "is_positive", "fire_start_index"};

ImageRecord parse_record(const json& j) {
  if (!j.is_object()) throw std::runtime_error("expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!kRecordKeys.count(k)) throw std::runtime_error("unknown key '" + k + "'");
  }
  for (const auto& k : kRecordKeys) {
    if (!j.contains(k)) throw std::runtime_error("missing key '" + k + "'");
  }
  ImageRecord r;
  if (!j["image_path"].is_string()) throw std::runtime_error("image_path must be a string");
  r.image_path = j["image_path"].get<std::string>();
  if (!j["width"].is_number_integer() || !j["height"].is_number_integer()) {
    throw std::runtime_error("width/height must be integers");
  }
  r.width = j["width"].get<int>();
  r.height = j["height"].get<int>();
  if (r.width <= 0 || r.height <= 0) throw std::runtime_error("width/height must be positive");
  if (!j["video_id"].is_string()) throw std::runtime_error("video_id must be a string");
  r.video_id = j["video_id"].get<std::string>();
  if (!j["frame_index"].is_number_integer() || j["frame_index"].get<std::int64_t>() < 0) {
    throw std::runtime_error("frame_index must be a non-negative integer");
  }
  r.frame_index = j["frame_index"].get<std::int64_t>();
  if (!j["is_positive"].is_boolean()) throw std::runtime_error("is_positive must be a boolean");
  r.is_positive = j["is_positive"].get<bool>();
  const auto& fs_idx = j["fire_start_index"];
  if (fs_idx.is_number_integer()) {
    r.fire_start_index = fs_idx.get<std::int64_t>();
  } else if (!fs_idx.is_null()) {
    throw std::runtime_error("fire_start_index must be an integer or null");
  }
  if (!j["boxes"].is_array()) throw std::runtime_error("boxes must be an array");
  for (const auto& b : j["boxes"]) {
    if (!b.is_array() || b.size() != 4) throw std::runtime_error("box must be [x1,y1,x2,y2]");
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!b[i].is_number()) throw std::runtime_error("box coordinates must be numbers");
      v[i] = b[i].get<double>();
      if (!std::isfinite(v[i])) throw std::runtime_error("box coordinates must be finite");
    }
    if (!(v[0] < v[2] && v[1] < v[3])) throw std::runtime_error("box requires x1<x2 and y1<y2");
    if (v[0] < 0 || v[1] < 0 || v[2] > r.width || v[3] > r.height) {
      throw std::runtime_error("box out of image bounds");
    }
    r.boxes.push_back({v[0], v[1], v[2], v[3], 0});
  }
  if (r.is_positive != !r.boxes.empty()) {
    throw std::runtime_error("is_positive inconsistent with boxes");
  }
  return r;
}

}  // namespace

std::vector<ImageRecord> load_jsonl_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<ImageRecord> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Dataset load_dataset_dir(const fs::path& dir) {
  Dataset ds;
  ds.root = dir;
  ds.records = load_jsonl_dataset(dir / "annotations.jsonl");
  return ds;
}

Letterbox Letterbox::fit(int src_w, int src_h, int target) {
  if (src_w <= 0 || src_h <= 0 || target <= 0) {
    throw std::invalid_argument("letterbox: sizes must be positive");
  }
  Letterbox lb;
  lb.scale = std::min(double(target) / src_w, double(target) / src_h);
  lb.content_w = std::min(target, static_cast<int>(std::lround(src_w * lb.scale)));
  lb.content_h = std::min(target, static_cast<int>(std::lround(src_h * lb.scale)));
  lb.pad_x = (target - lb.content_w) / 2;
  lb.pad_y = (target - lb.content_h) / 2;
  return lb;
}

GtBox Letterbox::apply(const GtBox& b) const {
  return {b.x1 * scale + pad_x, b.y1 * scale + pad_y, b.x2 * scale + pad_x, b.y2 * scale + pad_y,
          b.cls};
}

GtBox Letterbox::invert(const GtBox& b) const {
  return {(b.x1 - pad_x) / scale, (b.y1 - pad_y) / scale, (b.x2 - pad_x) / scale,
          (b.y2 - pad_y) / scale, b.cls};
}

std::array<double, 4> Letterbox::invert(const std::array<double, 4>& b) const {
  return invert(GtBox{b[0], b[1], b[2], b[3], 0}).as_array();
}

std::vector<double> letterbox_pixels(const Image& img, const Letterbox& lb, int target) {
  std::vector<double> out(static_cast<std::size_t>(target) * target * 3, kPadValue);
  const int ox = static_cast<int>(lb.pad_x), oy = static_cast<int>(lb.pad_y);
  for (int y = 0; y < lb.content_h; ++y) {
    const double sy = std::clamp((y + 0.5) / lb.scale - 0.5, 0.0, double(img.height - 1));
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, img.height - 1);
    const double ty = sy - y0;
    for (int x = 0; x < lb.content_w; ++x) {
      const double sx = std::clamp((x + 0.5) / lb.scale - 0.5, 0.0, double(img.width - 1));
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, img.width - 1);
      const double tx = sx - x0;
      for (int k = 0; k < 3; ++k) {
        auto p = [&](int xx, int yy) {
          return img.rgb[(static_cast<std::size_t>(yy) * img.width + xx) * 3 + u(k)] / 255.0;
        };
        const double top = p(x0, y0) + tx * (p(x1, y0) - p(x0, y0));
        const double bot = p(x0, y1) + tx * (p(x1, y1) - p(x0, y1));
        out[(static_cast<std::size_t>(y + oy) * target + (x + ox)) * 3 + u(k)] = top + ty * (bot - top);
      }
    }
  }
  return out;
}

GtBox flip_box(const GtBox& b, double width) { return {width - b.x2, b.y1, width - b.x1, b.y2, b.cls}; }

std::size_t temporal_partner(const Dataset& ds, std::size_t index) {
  const auto& r = ds.records.at(index);
  const std::int64_t want = std::max<std::int64_t>(r.frame_index - 2, 0);
  std::size_t best = index;
  std::int64_t best_frame = -1;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& c = ds.records[i];
    if (c.video_id != r.video_id || c.frame_index > r.frame_index) continue;
    if (c.frame_index == want) return i;
    // nearest earlier frame at or after the wanted one
    if (c.frame_index > want && (best_frame < 0 || c.frame_index < best_frame)) {
      best = i;
      best_frame = c.frame_index;
    }
  }
  return best;
}

template <typename T>
Batch<T> make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                    const BatchOptions& opt, Rng& rng) {
  if (indices.empty()) throw std::invalid_argument("make_batch: batch size must be >= 1");
  const int S = opt.input_size;
  const int C = opt.temporal_mode == TemporalMode::kConcat2 ? 6 : 3;
  const auto B = static_cast<std::int64_t>(indices.size());
  std::vector<T> data(u(B) * u(S) * u(S) * u(C));
  Batch<T> batch;
  for (std::int64_t b = 0; b < B; ++b) {
    const auto idx = indices[u(b)];
    const auto& rec = ds.records.at(idx);
    const Image img = ds.load_pixels(rec);
    const auto lb = Letterbox::fit(img.width, img.height, S);
    const bool flip = opt.flip && rng.bernoulli(0.5);
    std::vector<std::vector<double>> frames{letterbox_pixels(img, lb, S)};
    if (C == 6) {
      const Image prev = ds.load_pixels(ds.records[temporal_partner(ds, idx)]);
      frames.push_back(letterbox_pixels(prev, Letterbox::fit(prev.width, prev.height, S), S));
    }
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const int sx = flip ? S - 1 - x : x;
        T* dst = data.data() + ((u(b) * u(S) + u(y)) * u(S) + u(x)) * u(C);
        for (std::size_t f = 0; f < frames.size(); ++f) {
          for (int k = 0; k < 3; ++k) {
            dst[f * 3 + u(k)] = static_cast<T>(frames[f][(u(y) * u(S) + u(sx)) * 3 + u(k)]);
          }
        }
      }
    }
    std::vector<GtBox> gts;
    for (const auto& g : rec.boxes) {
      GtBox t = lb.apply(g);
      if (flip) t = flip_box(t, S);
      gts.push_back(t);
    }
    batch.positive.push_back(!gts.empty());
    batch.gts.push_back(std::move(gts));
    batch.letterbox.push_back(lb);
    batch.flipped.push_back(flip);
    batch.record_index.push_back(idx);
  }
  batch.images = Tensor<T>::from_data({B, S, S, C}, std::move(data));
  return batch;
}

template Batch<float> make_batch(const Dataset&, const std::vector<std::size_t>&,
                                 const BatchOptions&, Rng&);
template Batch<double> make_batch(const Dataset&, const std::vector<std::size_t>&,
                                  const BatchOptions&, Rng&);

}  // namespace smokedet
