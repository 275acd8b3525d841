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

#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "assign.hpp"
#include "checkpoint.hpp"
#include "json.hpp"

namespace smokedet {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointName = "checkpoint.json";
constexpr const char* kLogHeader = "step,total,l_conf,l_cls,l_box,p_batch,n_neg1,n_neg2";

std::string log_line(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g,%.10g,%lld,%lld,%lld",
                static_cast<long long>(s.step), s.total, s.conf, s.cls, s.box,
                static_cast<long long>(s.p_batch), static_cast<long long>(s.n_neg1),
                static_cast<long long>(s.n_neg2));
  return buf;
}

// Config fields that may change between a run and its resumption.
RunConfig resumable_view(RunConfig c) {
  c.train.steps = 0;
  c.train.checkpoint_every = 0;
  c.data_path.clear();
  c.out_path.clear();
  return c;
}

template <typename T>
nlohmann::json checkpoint_meta(const RunConfig& cfg, const Detector<T>& det, std::int64_t step) {
  return {{"step", step},
          {"config", config_to_string(cfg)},
          {"param_count", det.params().count()},
          {"embed_param_count", det.embed_param_count()}};
}

template <typename T>
TrainResult train_impl(const RunConfig& cfg, const Dataset& ds, const fs::path& out_dir,
                       bool resume, const std::function<void(const StepLog&)>& on_step) {
  if (ds.records.empty()) throw std::invalid_argument("train: dataset is empty");
  Detector<T> det(cfg.model_config(), cfg.train.seed);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());

  const fs::path manifest = out_dir / kCheckpointName;
  const fs::path log_path = out_dir / "train_log.csv";
  TrainResult result;
  std::vector<std::string> kept_log;
  if (resume) {
    const nlohmann::json meta = load_checkpoint(manifest, det.params(), true);
    const RunConfig saved = parse_config(meta.at("config").get<std::string>());
    if (!(resumable_view(saved) == resumable_view(cfg))) {
      throw ConfigError("resume: config differs from the checkpoint's beyond train.steps");
    }
    result.start_step = meta.at("step").get<std::int64_t>();
    std::ifstream old(log_path);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) < result.start_step) kept_log.push_back(line);
    }
  }
  save_config(out_dir / "config.txt", cfg);
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  log << kLogHeader << "\n";
  for (const auto& l : kept_log) log << l << "\n";

  const SamplingConfig sampling = cfg.sampling_config();
  const BatchOptions bopt{cfg.train.input_size, cfg.train.flip, cfg.temporal_mode};
  const auto layout = LocationLayout::for_input(cfg.train.input_size, cfg.train.input_size);
  const Rng step_root(cfg.train.seed, 0x747261696eULL);
  for (std::int64_t t = result.start_step; t < cfg.train.steps; ++t) {
    StepLog entry;
    entry.step = t;
    try {
      const Rng step_rng = step_root.child(static_cast<std::uint64_t>(t));
      Rng flip_rng = step_rng.child(0);
      Rng sample_rng = step_rng.child(1);
      const auto idx = batch_indices(ds.records.size(), cfg.train.batch_size, cfg.train.seed, t);
      const Batch<T> batch = make_batch<T>(ds, idx, bopt, flip_rng);
      const auto head = det.forward(batch.images);
      const Targets targets = assign_positives(batch.gts, layout);
      const MaskSet masks =
          build_masks(targets, batch.positive, flatten_conf(head), sampling, sample_rng);
      const LossTerms<T> loss = compute_losses(head, targets, masks);
      entry.total = static_cast<double>(loss.total.item());
      entry.conf = loss.conf;
      entry.cls = loss.cls;
      entry.box = loss.box;
      entry.p_batch = loss.num_pos;
      entry.n_neg1 = masks.count(masks.neg1);
      entry.n_neg2 = masks.count(masks.neg2);
      loss.total.backward();
      SgdOptions sgd{learning_rate_at(cfg.train, t), cfg.train.momentum, cfg.train.weight_decay};
      sgd_step(det.params(), sgd);
    } catch (const NumericError& e) {
      log.flush();
      throw NumericError("training diverged at step " + std::to_string(t) + ": " + e.what());
    }
    log << log_line(entry) << "\n";
    result.log.push_back(entry);
    if (on_step) on_step(entry);
    if (cfg.train.checkpoint_every > 0 && (t + 1) % cfg.train.checkpoint_every == 0 &&
        t + 1 < cfg.train.steps) {
      log.flush();
      save_checkpoint(manifest, det.params(), checkpoint_meta(cfg, det, t + 1), true);
    }
  }
  log.flush();
  save_checkpoint(manifest, det.params(),
                  checkpoint_meta(cfg, det, std::max(result.start_step, cfg.train.steps)), true);
  return result;
}

template <typename T>
std::vector<metrics::Detection> inference_impl(const RunConfig& cfg, const Detector<T>& det,
                                               const Dataset& ds, int threads,
                                               std::int64_t batch_size) {
  const auto n = ds.records.size();
  const auto B = static_cast<std::size_t>(std::max<std::int64_t>(1, batch_size));
  const std::size_t num_batches = (n + B - 1) / B;
  std::vector<std::vector<metrics::Detection>> per_batch(num_batches);
  const BatchOptions bopt{cfg.train.input_size, false, cfg.temporal_mode};
  const int S = cfg.train.input_size;
  auto work = [&](std::size_t worker, std::size_t stride) {
    NoGradGuard no_grad;
    Rng unused(0);
    for (std::size_t k = worker; k < num_batches; k += stride) {
      std::vector<std::size_t> idx;
      for (std::size_t i = k * B; i < std::min(n, (k + 1) * B); ++i) idx.push_back(i);
      const Batch<T> batch = make_batch<T>(ds, idx, bopt, unused);
      DecodeOptions dopt;
      dopt.score_floor = cfg.eval.score_floor;
      dopt.nms_iou = cfg.eval.nms_iou;
      dopt.image_w = S;
      dopt.image_h = S;
      const auto dets = decode_boxes(det.forward(batch.images), dopt);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& rec = ds.records[idx[b]];
        for (const auto& d : dets[b]) {
          auto box = batch.letterbox[b].invert(d.box);
          box[0] = std::clamp(box[0], 0.0, double(rec.width));
          box[2] = std::clamp(box[2], 0.0, double(rec.width));
          box[1] = std::clamp(box[1], 0.0, double(rec.height));
          box[3] = std::clamp(box[3], 0.0, double(rec.height));
          if (box[2] <= box[0] || box[3] <= box[1]) continue;
          per_batch[k].push_back({rec.image_id(), box, d.score});
        }
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp<std::size_t>(
      static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(num_batches, 1)));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::vector<metrics::Detection> out;
  for (auto& v : per_batch) {
    for (auto& d : v) out.push_back(std::move(d));
  }
  return out;
}

void write_key_values(const fs::path& path,
                      const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "key,value\n";
  for (const auto& [k, v] : rows) out << k << "," << v << "\n";
}

}  // namespace

double learning_rate_at(const TrainSettings& train, std::int64_t step) {
  const std::int64_t w = train.warmup_steps;
  if (step < w) return train.lr * double(step + 1) / double(w);
  if (!train.cosine || train.steps <= w) return train.lr;
  const double progress = double(step - w) / double(train.steps - w);
  return train.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

std::vector<std::size_t> batch_indices(std::size_t n, std::int64_t batch_size, std::uint64_t seed,
                                       std::int64_t step) {
  if (n == 0 || batch_size < 1) throw std::invalid_argument("batch_indices: empty dataset or batch");
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> perm;
  const auto N = static_cast<std::int64_t>(n);
  for (std::int64_t k = 0; k < batch_size; ++k) {
    const std::int64_t pos = step * batch_size + k;
    const std::int64_t epoch = pos / N;
    if (epoch != cached_epoch) {
      Rng rng(seed, 1000 + static_cast<std::uint64_t>(epoch));
      perm = sample_without_replacement(N, N, rng);
      cached_epoch = epoch;
    }
    out.push_back(static_cast<std::size_t>(perm[static_cast<std::size_t>(pos % N)]));
  }
  return out;
}

TrainResult train_detector(const RunConfig& cfg, const Dataset& ds, const fs::path& out_dir,
                           bool resume, const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  if (cfg.train.dtype == DType::kF64) return train_impl<double>(cfg, ds, out_dir, resume, on_step);
  return train_impl<float>(cfg, ds, out_dir, resume, on_step);
}

std::int64_t LoadedModel::param_count() const {
  return std::visit([](const auto& d) { return d->params().count(); }, detector);
}

std::int64_t LoadedModel::embed_param_count() const {
  return std::visit([](const auto& d) { return d->embed_param_count(); }, detector);
}

LoadedModel build_model(const RunConfig& cfg) {
  cfg.validate();
  LoadedModel m;
  m.config = cfg;
  if (cfg.train.dtype == DType::kF64) {
    m.detector = std::make_unique<Detector<double>>(cfg.model_config(), cfg.train.seed);
  } else {
    m.detector = std::make_unique<Detector<float>>(cfg.model_config(), cfg.train.seed);
  }
  return m;
}

LoadedModel load_model(const fs::path& checkpoint) {
  const auto manifest = read_manifest(checkpoint);
  if (!manifest.contains("meta") || !manifest["meta"].contains("config")) {
    throw std::runtime_error(checkpoint.string() + ": checkpoint carries no run config");
  }
  LoadedModel m = build_model(parse_config(manifest["meta"]["config"].get<std::string>()));
  std::visit([&](auto& d) { load_checkpoint(checkpoint, d->params(), false); }, m.detector);
  m.step = manifest["meta"].value("step", std::int64_t{0});
  return m;
}

std::vector<metrics::Detection> run_inference(const LoadedModel& model, const Dataset& ds,
                                              int threads, std::int64_t batch_size) {
  return std::visit(
      [&](const auto& d) { return inference_impl(model.config, *d, ds, threads, batch_size); },
      model.detector);
}

metrics::EvalSet make_eval_set(const Dataset& ds, std::vector<metrics::Detection> dets) {
  metrics::EvalSet set;
  set.detections = std::move(dets);
  for (const auto& r : ds.records) {
    const auto id = r.image_id();
    if (set.image_meta.count(id)) throw std::runtime_error("duplicate image id " + id);
    set.ground_truth[id] = r.boxes;
    set.image_meta[id] = {r.video_id, r.frame_index, r.is_positive, r.fire_start_index};
  }
  return set;
}

std::string detection_to_json_line(const metrics::Detection& d) {
  nlohmann::ordered_json j;
  j["image_id"] = d.image_id;
  j["box"] = {d.box[0], d.box[1], d.box[2], d.box[3]};
  j["score"] = d.score;
  return j.dump();
}

metrics::EvalReport evaluate_model(const LoadedModel& model, const Dataset& ds,
                                   const EvalRequest& req, const fs::path& report_dir, bool svg) {
  auto dets = run_inference(model, ds, req.threads, req.batch_size);
  std::error_code ec;
  fs::create_directories(report_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + report_dir.string() + ": " + ec.message());
  {
    std::ofstream out(report_dir / "detections.jsonl", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write detections.jsonl in " + report_dir.string());
    for (const auto& d : dets) out << detection_to_json_line(d) << "\n";
  }
  const metrics::EvalSet set = make_eval_set(ds, std::move(dets));
  metrics::EvalReport report = metrics::evaluate(set, req.options);
  metrics::write_report(report, report_dir.string(), svg);
  const auto& c = model.config;
  write_key_values(report_dir / "run.csv",
                   {{"sampling_mode", sampling_mode_name(c.sampling_mode)},
                    {"param_count", std::to_string(model.param_count())},
                    {"ccpe_param_count",
                     c.use_ccpe ? std::to_string(model.embed_param_count()) : "NA"},
                    {"train_steps", std::to_string(model.step)},
                    {"seed", std::to_string(c.train.seed)}});
  return report;
}

int threads_from_env() {
  const char* v = std::getenv("CCPE_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw ConfigError(std::string("CCPE_THREADS must be a positive integer, got '") + v + "'");
  }
  return static_cast<int>(n);
}

}  // namespace smokedet
