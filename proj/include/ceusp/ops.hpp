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

#include <cstddef>
#include <vector>

#include "ceusp/tensor.hpp"

// Differentiable primitives. Every function records a backward rule when
// any input requires a gradient and grad mode is on. Results are checked
// for NaN/Inf and raise NumericError instead of propagating them.

namespace ceusp {

// Layout.
Tensor permute(const Tensor& t, const DimOrder& order);
Tensor inverse_permute(const Tensor& t, const DimOrder& order);
Tensor reshape(const Tensor& t, Shape shape);
/// Concatenate along axis 0; trailing extents must agree.
Tensor concat(const std::vector<Tensor>& parts);
/// Stack equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Single element as a scalar.
Tensor select(const Tensor& t, std::size_t flat_index);

// Elementwise with broadcasting: ranks must match and each extent pair
// must be equal or contain a 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, Real factor);
Tensor add_scalar(const Tensor& t, Real offset);

// Elementwise unary.
Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor exp(const Tensor& t);
/// Natural log; DomainError on any non-positive entry.
Tensor log(const Tensor& t);
/// max(t, floor). The gradient passes only where t > floor.
Tensor clamp_min(const Tensor& t, Real floor);

// Reductions.
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor dot(const Tensor& a, const Tensor& b);

// Vectors (rank 1).
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
/// v / ||v||_2; DomainError when v is all zeros.
Tensor l2_normalize(const Tensor& v);
/// W x + b with x (in), W (out, in), b (out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Feature maps (C, H, W).
struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};
/// x (Cin, H, W), weight (Cout, Cin, k, k), bias (Cout). Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions options);
/// Mean over H and W: (C, H, W) -> (C).
Tensor global_avg_pool(const Tensor& x);
/// Mean over C at each position: (C, H, W) -> (1, H, W).
Tensor channel_avg_pool(const Tensor& x);
/// Max over C at each position: (C, H, W) -> (1, H, W).
Tensor channel_max_pool(const Tensor& x);
/// Per-channel standardization over H and W with affine gamma/beta (C).
Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real{1e-5});
/// Standardization over each of `groups` consecutive channel blocks and all
/// positions, then per-channel affine. groups == C is channel_norm.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups,
                  Real eps = Real{1e-5});

}  // namespace ceusp
