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

#ifndef SMOKEDET_GRADCHECK_HPP_
#define SMOKEDET_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace smokedet {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates probed per input; <= 0 checks every element.
  std::int64_t max_samples_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  std::int64_t coordinates = 0;
  bool passed = false;
};

/// Compares reverse-mode gradients of `f` (sum-reduced when not scalar) with
/// central differences, perturbing `inputs` in place. Per-coordinate error is
/// |a - n| / max(|a|, |n|, 1e-3 * s) with s the largest gradient magnitude over
/// all inputs, so coordinates whose gradient is lost in finite-difference
/// roundoff do not dominate.
GradCheckResult grad_check(const std::string& name,
                           const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace smokedet

#endif  // SMOKEDET_GRADCHECK_HPP_
