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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#ifndef CEUSP_REAL
#define CEUSP_REAL double
#endif

namespace ceusp {

/// Scalar type of every tensor. Selected at build time (CEUSP_USE_FLOAT).
using Real = CEUSP_REAL;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Axis permutation: output axis i reads input axis order[i].
class DimOrder {
 public:
  explicit DimOrder(std::vector<std::size_t> order);

  // Named orders over (C, H, W).
  static DimOrder CHW() { return DimOrder({0, 1, 2}); }
  static DimOrder HWC() { return DimOrder({1, 2, 0}); }
  static DimOrder WCH() { return DimOrder({2, 0, 1}); }
  static DimOrder CWH() { return DimOrder({0, 2, 1}); }

  /// The four attention-branch orders in stream order.
  static std::array<DimOrder, 4> branch_orders() { return {CHW(), HWC(), WCH(), CWH()}; }

  std::size_t size() const { return order_.size(); }
  std::size_t operator[](std::size_t i) const { return order_[i]; }
  const std::vector<std::size_t>& axes() const { return order_; }
  DimOrder inverse() const;
  bool is_identity() const;
  std::string name() const;

  friend bool operator==(const DimOrder&, const DimOrder&) = default;

 private:
  std::vector<std::size_t> order_;
};

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  std::uint64_t id = 0;

  bool is_leaf() const { return !backward; }
  /// Gradient buffer, allocated (zero-filled) on first use.
  std::vector<Real>& grad_buffer();
};

std::uint64_t next_node_id();

}  // namespace detail

/// Shared handle to a node of the computation graph.
///
/// Copies alias the same storage. Results of operations are immutable;
/// leaves (parameters, inputs) may be edited in place through
/// mutable_data() between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const Real> data() const;
  std::span<Real> mutable_data();
  std::vector<Real> to_vector() const;
  Real item() const;
  Real operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  /// Accumulated gradient; zeros if nothing has been accumulated yet.
  std::vector<Real> grad() const;
  void zero_grad();
  std::uint64_t node_id() const;

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate; the
  /// graph behind this tensor is released afterwards.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;

  // Internal: used by the operation library.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether new operations record backward rules on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace ceusp
