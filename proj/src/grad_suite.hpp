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

#ifndef SMOKEDET_GRAD_SUITE_HPP_
#define SMOKEDET_GRAD_SUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace smokedet {

struct GradSuiteOptions {
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  double step = 1e-5;
  // Scales the conv backward pass so the suite can be shown to catch it.
  bool inject_conv_fault = false;
};

/// Finite-difference checks of every differentiable op, the contrast
/// embedding, an attention block, the detection head and the total loss.
std::vector<GradCheckResult> run_grad_suite(const GradSuiteOptions& opt);

}  // namespace smokedet

#endif  // SMOKEDET_GRAD_SUITE_HPP_
