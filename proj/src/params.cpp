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

#include "params.hpp"

#include <cmath>
#include <stdexcept>

namespace smokedet {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const auto n = static_cast<std::size_t>(numel(shape));
  std::vector<T> data(n, T(0));
  if (init == Init::kOnes) {
    data.assign(n, T(1));
  } else if (init == Init::kHeUniform || init == Init::kFanInUniform) {
    std::int64_t fan_in = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    const double f = static_cast<double>(std::max<std::int64_t>(fan_in, 1));
    const double bound = init == Init::kHeUniform ? std::sqrt(6.0 / f) : 1.0 / std::sqrt(f);
    for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  auto t = Tensor<T>::from_data(std::move(shape), std::move(data), true);
  index_[name] = params_.size();
  params_.push_back(Parameter<T>{name, t, std::vector<T>(n, T(0))});
  return t;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].tensor;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].tensor;
}

template <typename T>
std::int64_t ParameterStore<T>::count() const {
  return count("");
}

template <typename T>
std::int64_t ParameterStore<T>::count(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.tensor.size();
  }
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void sgd_step(ParameterStore<T>& store, const SgdOptions& opt) {
  for (auto& p : store.params()) {
    if (!p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient in parameter " + p.name);
      }
    }
  }
  const T lr = static_cast<T>(opt.lr);
  const T mom = static_cast<T>(opt.momentum);
  const T wd = static_cast<T>(opt.weight_decay);
  for (auto& p : store.params()) {
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    const bool has_grad = !g.empty();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = has_grad ? g[i] : T(0);
      p.momentum[i] = mom * p.momentum[i] + gi + wd * w[i];
      w[i] -= lr * p.momentum[i];
    }
    p.tensor.zero_grad();
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void sgd_step(ParameterStore<float>&, const SgdOptions&);
template void sgd_step(ParameterStore<double>&, const SgdOptions&);

}  // namespace smokedet
