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

// Command-line front end. Talks to the library only through smokedet.h.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smokedet/smokedet.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int report_failure(smokedet_status s) {
  std::cerr << "error: " << smokedet_last_error() << "\n";
  return s == SMOKEDET_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
}

struct ConfigDeleter {
  void operator()(smokedet_config* c) const { smokedet_config_destroy(c); }
};
struct ModelDeleter {
  void operator()(smokedet_model* m) const { smokedet_model_destroy(m); }
};
struct GradDeleter {
  void operator()(smokedet_gradcheck* g) const { smokedet_gradcheck_destroy(g); }
};
struct StringDeleter {
  void operator()(char* s) const { smokedet_string_free(s); }
};

struct GendataArgs {
  std::string out;
  std::int64_t num = 0;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  int size = 128;
};

int run_gendata(const GendataArgs& a) {
  const smokedet_gendata_options opt{a.out.c_str(), a.num, a.fraction, a.seed, a.size};
  char digest[17] = {0};
  std::int64_t positives = 0;
  if (auto s = smokedet_gendata(&opt, digest, &positives); s != SMOKEDET_OK) {
    return report_failure(s);
  }
  std::cout << "records " << a.num << " positive " << positives << "\n";
  std::cout << "digest " << digest << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> overrides;
  bool resume = false;
  int log_every = 10;
};

void print_step(const smokedet_step_info* s, void* user) {
  const int every = *static_cast<const int*>(user);
  if (every <= 0 || s->step % every != 0) return;
  std::printf("step %lld total %.6g conf %.6g cls %.6g box %.6g P %lld neg1 %lld neg2 %lld\n",
              static_cast<long long>(s->step), s->total, s->l_conf, s->l_cls, s->l_box,
              static_cast<long long>(s->p_batch), static_cast<long long>(s->n_neg1),
              static_cast<long long>(s->n_neg2));
  std::fflush(stdout);
}

int run_train(TrainArgs a) {
  smokedet_config* raw = nullptr;
  auto s = a.config.empty() ? smokedet_config_create(&raw) : smokedet_config_load(a.config.c_str(), &raw);
  if (s != SMOKEDET_OK) return report_failure(s);
  std::unique_ptr<smokedet_config, ConfigDeleter> cfg(raw);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      return kExitUsage;
    }
    if ((s = smokedet_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str())) !=
        SMOKEDET_OK) {
      return report_failure(s);
    }
  }
  if ((s = smokedet_config_validate(cfg.get())) != SMOKEDET_OK) return report_failure(s);
  smokedet_train_summary summary{};
  s = smokedet_train(cfg.get(), a.data.c_str(), a.out.c_str(), a.resume ? 1 : 0, print_step,
                     &a.log_every, &summary);
  if (s != SMOKEDET_OK) return report_failure(s);
  std::printf("trained steps %lld..%lld initial_loss %.6g final_loss %.6g\n",
              static_cast<long long>(summary.start_step),
              static_cast<long long>(summary.start_step + summary.steps_run),
              summary.initial_loss, summary.final_loss);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, report, level = "all";
  double threshold = -1;
  bool svg = false;
};

int run_eval(const EvalArgs& a) {
  std::filesystem::path ckpt = a.checkpoint;
  if (std::filesystem::is_directory(ckpt)) ckpt /= "checkpoint.json";
  smokedet_model* raw = nullptr;
  if (auto s = smokedet_model_load(ckpt.string().c_str(), &raw); s != SMOKEDET_OK) {
    return report_failure(s);
  }
  std::unique_ptr<smokedet_model, ModelDeleter> model(raw);
  smokedet_eval_options opt{};
  opt.levels = a.level == "bbox"    ? SMOKEDET_LEVEL_BBOX
               : a.level == "image" ? SMOKEDET_LEVEL_IMAGE
               : a.level == "video" ? SMOKEDET_LEVEL_VIDEO
                                    : SMOKEDET_LEVEL_ALL;
  opt.use_threshold = a.threshold >= 0;
  opt.threshold = a.threshold;
  opt.svg = a.svg;
  smokedet_eval_result result{};
  if (auto s = smokedet_eval(model.get(), a.data.c_str(), a.report.c_str(), &opt, &result);
      s != SMOKEDET_OK) {
    return report_failure(s);
  }
  std::cout << "detections " << result.num_detections << " iou_evaluations "
            << result.iou_evaluations << "\n";
  std::ifstream summary(std::filesystem::path(a.report) / "summary.csv");
  std::cout << summary.rdbuf();
  return 0;
}

struct GradArgs {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::string inject;
};

int run_gradcheck(const GradArgs& a) {
  smokedet_gradcheck* raw = nullptr;
  if (auto s = smokedet_gradcheck_run(a.seed, a.tolerance, a.inject == "conv-backward", &raw);
      s != SMOKEDET_OK) {
    return report_failure(s);
  }
  std::unique_ptr<smokedet_gradcheck, GradDeleter> g(raw);
  std::vector<std::string> failed;
  for (size_t i = 0; i < smokedet_gradcheck_count(g.get()); ++i) {
    const bool ok = smokedet_gradcheck_passed(g.get(), i);
    std::printf("%-22s max_rel_err %.3e coords %5lld %s\n", smokedet_gradcheck_name(g.get(), i),
                smokedet_gradcheck_error(g.get(), i),
                static_cast<long long>(smokedet_gradcheck_coordinates(g.get(), i)),
                ok ? "PASS" : "FAIL");
    if (!ok) failed.emplace_back(smokedet_gradcheck_name(g.get(), i));
  }
  if (!failed.empty()) {
    std::cerr << "gradient check failed for:";
    for (const auto& f : failed) std::cerr << " " << f;
    std::cerr << " (tolerance " << a.tolerance << ")\n";
    return kExitRuntime;
  }
  std::cout << "all " << smokedet_gradcheck_count(g.get()) << " targets passed\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> dirs;
  std::string format = "csv";
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<const char*> dirs;
  for (const auto& d : a.dirs) dirs.push_back(d.c_str());
  char* raw = nullptr;
  if (auto s = smokedet_report(dirs.data(), dirs.size(), a.format.c_str(), &raw);
      s != SMOKEDET_OK) {
    return report_failure(s);
  }
  std::unique_ptr<char, StringDeleter> text(raw);
  if (a.out.empty()) {
    std::cout << text.get();
    return 0;
  }
  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  if (!(out << text.get())) {
    std::cerr << "error: cannot write " << a.out << "\n";
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wildfire smoke detection with contrast patch embedding and separable negative sampling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", smokedet_version());

  GendataArgs gen;
  auto* g = app.add_subcommand("gendata", "Render a synthetic smoke dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--num", gen.num, "Number of images")->required()->check(CLI::PositiveNumber);
  g->add_option("--positive-fraction", gen.fraction, "Fraction of positive images")
      ->check(CLI::Range(0.0, 1.0));
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--size", gen.size, "Image side in pixels")->check(CLI::Range(8, 4096));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a detector");
  t->add_option("--config", tr.config, "key = value config file")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  t->add_flag("--resume", tr.resume, "Continue from the run directory's checkpoint");
  t->add_option("--log-every", tr.log_every, "Print every Nth step (0: silent)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint manifest or run directory")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--report", ev.report, "Report directory")->required();
  e->add_option("--level", ev.level, "Metric levels")
      ->check(CLI::IsMember({"bbox", "image", "video", "all"}));
  e->add_option("--threshold", ev.threshold, "Classification score threshold")
      ->check(CLI::Range(0.0, 1.0));
  e->add_flag("--svg", ev.svg, "Also write curve SVGs");

  GradArgs gr;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check suite");
  gc->add_option("--seed", gr.seed, "Seed for inputs and weights");
  gc->add_option("--tolerance", gr.tolerance, "Max relative error")->check(CLI::PositiveNumber);
  gc->add_option("--inject-fault", gr.inject, "Deliberately break a backward pass")
      ->check(CLI::IsMember({"conv-backward"}));

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Merge run reports into one comparison table");
  r->add_option("--in", rp.dirs, "Report directories")->required()->expected(1, -1);
  r->add_option("--format", rp.format, "Output format")->check(CLI::IsMember({"csv", "svg"}));
  r->add_option("--out", rp.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }
  if (g->parsed()) return run_gendata(gen);
  if (t->parsed()) return run_train(tr);
  if (e->parsed()) return run_eval(ev);
  if (gc->parsed()) return run_gradcheck(gr);
  return run_report(rp);
}
