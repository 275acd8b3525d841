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

#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ops.hpp"
#include "rng.hpp"

namespace smokedet {

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  NoGradGuard no_grad;
  auto out = f();
  double total = 0;
  for (double v : out.data()) total += v;
  return total;
}

}  // namespace

GradCheckResult grad_check(const std::string& name, const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, double tolerance,
                           const GradCheckOptions& options) {
  for (auto& in : inputs) in.zero_grad();
  {
    auto out = f();
    if (out.size() != 1) out = ops::sum(out);
    out.backward();
  }
  GradCheckResult result{name, 0.0, tolerance, 0, false};
  Rng rng(options.seed, 0x67726164ULL);
  struct Probe {
    std::vector<double> analytic, numeric;
  };
  std::vector<Probe> probes;
  double scale = 0;
  for (auto& in : inputs) {
    const std::int64_t n = in.size();
    std::vector<double> grad(static_cast<std::size_t>(n), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), grad.begin());
    for (double g : grad) scale = std::max(scale, std::abs(g));

    std::vector<std::int64_t> coords;
    if (options.max_samples_per_input > 0 && options.max_samples_per_input < n) {
      coords = sample_without_replacement(n, options.max_samples_per_input, rng);
      std::sort(coords.begin(), coords.end());
    } else {
      coords.resize(static_cast<std::size_t>(n));
      std::iota(coords.begin(), coords.end(), 0);
    }
    Probe probe;
    auto data = in.mutable_data();
    for (auto c : coords) {
      auto& v = data[static_cast<std::size_t>(c)];
      const double orig = v;
      v = orig + options.step;
      const double plus = evaluate(f);
      v = orig - options.step;
      const double minus = evaluate(f);
      v = orig;
      probe.analytic.push_back(grad[static_cast<std::size_t>(c)]);
      probe.numeric.push_back((plus - minus) / (2 * options.step));
      scale = std::max(scale, std::abs(probe.numeric.back()));
    }
    result.coordinates += static_cast<std::int64_t>(coords.size());
    probes.push_back(std::move(probe));
    in.zero_grad();
  }
  for (const auto& p : probes) {
    for (std::size_t c = 0; c < p.analytic.size(); ++c) {
      const double a = p.analytic[c], num = p.numeric[c];
      const double denom = std::max({std::abs(a), std::abs(num), 1e-3 * scale, 1e-12});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - num) / denom);
    }
  }
  result.passed = result.max_rel_error <= tolerance;
  return result;
}

}  // namespace smokedet
