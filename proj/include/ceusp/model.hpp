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
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ceusp/tensor.hpp"

namespace ceusp {

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t in_height = 16;
  std::size_t in_width = 16;
  /// Output channels and stride of each 3x3 conv stage.
  std::vector<std::size_t> widths{16, 32, 32};
  std::vector<std::size_t> strides{1, 2, 2};
  /// Channel groups of each stage's normalization; 1 normalizes the whole map.
  std::size_t norm_groups = 1;
  std::size_t n_streams = 5;
  std::size_t bottleneck = 32;
  std::size_t n_classes = 64;
  std::size_t caci_reduction = 4;
  std::size_t caci_kernel = 7;
  bool caci_weight_sharing = true;

  /// ConfigError on inconsistent settings.
  void validate() const;
  std::size_t c_out() const { return widths.back(); }
  /// Shape of the backbone output map (C, H', W').
  Shape feature_shape() const;
};

enum class ParamGroup { kBackbone, kHead };

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

struct ConvStage {
  Tensor weight, bias, gamma, beta;
};

/// Channel gate of one attention branch (the MLP over the pooled leading axis).
struct ChannelGate {
  Tensor w1, b1, w2, b2;
};

/// Spatial gate: k x k conv over the (avg, max) pooled pair.
struct SpatialGate {
  Tensor weight, bias;
};

struct StreamHead {
  Tensor bottleneck_w, bottleneck_b, classifier_w, classifier_b;
};

/// Every trainable tensor. One backbone serves both views.
struct ModelParams {
  std::vector<ConvStage> stages;
  std::array<ChannelGate, 4> channel_gates;
  /// One shared set when weight sharing is on, else one per branch.
  std::vector<SpatialGate> spatial_gates;
  std::vector<StreamHead> heads;

  const SpatialGate& spatial_gate(std::size_t branch) const {
    return spatial_gates.size() == 1 ? spatial_gates[0] : spatial_gates[branch];
  }
  std::vector<NamedParam> named() const;
  std::size_t count() const;
};

struct CaciOutput {
  Tensor attended;
  Tensor scale;  // entries in (0, 1), same shape as the input
};

struct RcaOutput {
  Tensor fused;
  std::array<Tensor, 4> branches;  // CHW, HWC, WCH, CWH
  std::array<Tensor, 4> scales;    // in permuted layout
};

struct HeadOutput {
  std::vector<Tensor> bottlenecks;  // [fused, CHW, HWC, WCH, CWH]
  std::vector<Tensor> logits;
};

struct ModelOutput {
  Tensor feature;    // backbone map
  RcaOutput rca;
  Tensor metric;     // unit-norm global average of the fused map
  HeadOutput head;
};

class Model {
 public:
  /// Fan-in scaled uniform weights, zero biases, unit norm gains.
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  Tensor backbone_forward(const Tensor& x) const;
  /// Attention on a (A, B, D) map using branch `branch`'s parameters.
  CaciOutput caci_forward(const Tensor& x, std::size_t branch) const;
  RcaOutput rca_forward(const Tensor& f) const;
  HeadOutput head_forward(const RcaOutput& rca) const;
  ModelOutput forward(const Tensor& x) const;
  /// Concatenated bottlenecks, L2 normalized.
  Tensor extract_embedding(const Tensor& x) const;
  /// Channel-wise L2 magnitude of the fused map: (H', W').
  Tensor attention_map(const Tensor& x) const;

  /// Copies values into the parameters; VersionError on a name or shape mismatch.
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  ModelConfig config_;
  ModelParams params_;
};

/// Standalone attention block for explicit parameters.
CaciOutput caci_forward(const Tensor& x, const ChannelGate& channel, const SpatialGate& spatial);

}  // namespace ceusp
