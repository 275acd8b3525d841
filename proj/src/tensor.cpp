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

#include "tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace smokedet {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType d) { return d == DType::kF32 ? "f32" : "f64"; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
void check_finite(std::span<const T> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value in ") + what +
                         " at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v, bool requires_grad) {
  auto n = numel(shape);
  return from_data(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), v),
                   requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
  }
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  check_finite<T>(data, "tensor construction");
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
std::int64_t Tensor<T>::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(i)];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank()) throw ShapeError("at(): rank mismatch");
  std::int64_t flat = 0;
  int i = 0;
  for (auto v : idx) {
    auto d = node_->shape[static_cast<std::size_t>(i++)];
    if (v < 0 || v >= d) throw ShapeError("at(): index out of range");
    flat = flat * d + v;
  }
  return node_->value[static_cast<std::size_t>(flat)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->value, false);
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  }
  // Iterative post-order DFS yields a topological order of the graph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->grad.empty() || !n->backward) continue;
    check_finite<T>(n->grad, n->op);
    n->backward(*n);
  }
  for (Node<T>* n : order) {
    if (!n->backward && !n->grad.empty()) check_finite<T>(n->grad, "leaf gradient");
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  if (numel(shape) != static_cast<std::int64_t>(value.size())) {
    throw ShapeError(std::string(op) + ": internal shape/data mismatch");
  }
  check_finite<T>(value, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;
template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);
template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);

}  // namespace smokedet
