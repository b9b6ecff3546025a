// Copyright 2026 The CEUSP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ceusp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <unordered_set>

#include "ceusp/errors.hpp"

namespace ceusp {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

DimOrder::DimOrder(std::vector<std::size_t> order) : order_(std::move(order)) {
  std::vector<bool> seen(order_.size(), false);
  for (auto axis : order_) {
    if (axis >= order_.size() || seen[axis]) {
      throw ShapeError("DimOrder is not a permutation of 0.." + std::to_string(order_.size() - 1));
    }
    seen[axis] = true;
  }
}

DimOrder DimOrder::inverse() const {
  std::vector<std::size_t> inv(order_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) inv[order_[i]] = i;
  return DimOrder(std::move(inv));
}

bool DimOrder::is_identity() const {
  for (std::size_t i = 0; i < order_.size(); ++i) {
    if (order_[i] != i) return false;
  }
  return true;
}

std::string DimOrder::name() const {
  if (order_.size() == 3) {
    static constexpr char kAxis[] = {'C', 'H', 'W'};
    return {kAxis[order_[0]], kAxis[order_[1]], kAxis[order_[2]]};
  }
  std::string s;
  for (auto a : order_) s += std::to_string(a);
  return s;
}

namespace detail {

std::vector<Real>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Real{0});
  return grad;
}

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape, std::size_t n) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != n) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " + std::to_string(n) + " values");
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::from_data(Shape shape, std::vector<Real> data, bool requires_grad) {
  check_shape(shape, data.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = detail::next_node_id();
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::span<const Real> Tensor::data() const { return node_->data; }

std::span<Real> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw ContractError("only leaf tensors may be modified in place");
  return node_->data;
}

std::vector<Real> Tensor::to_vector() const { return node_->data; }

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_->is_leaf(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<Real> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<Real>(numel(), Real{0});
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }
std::uint64_t Tensor::node_id() const { return node_->id; }

Tensor Tensor::detach() const { return from_data(node_->shape, node_->data, false); }

void Tensor::backward() const {
  if (numel() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += Real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (auto* node : order) {
    if (!node->is_leaf()) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

}  // namespace ceusp
