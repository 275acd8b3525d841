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

#ifndef SMOKEDET_PARAMS_HPP_
#define SMOKEDET_PARAMS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace smokedet {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> momentum;
};

// Uniform inits draw from +-bound with fan_in = product of all dims but the last:
// He uses sqrt(6/fan_in), fan-in uniform uses 1/sqrt(fan_in).
enum class Init { kZeros, kOnes, kHeUniform, kFanInUniform };

/// Ordered, name-unique collection of trainable tensors.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, Init init, Rng& rng);

  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  std::int64_t count() const;
  /// Parameters whose name starts with `prefix`.
  std::int64_t count(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

/// v <- momentum*v + grad + wd*w ; w <- w - lr*v ; grads cleared.
template <typename T>
void sgd_step(ParameterStore<T>& store, const SgdOptions& opt);

}  // namespace smokedet

#endif  // SMOKEDET_PARAMS_HPP_
