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

#include "ceusp/model.hpp"

#include <cmath>

#include "ceusp/errors.hpp"
#include "ceusp/ops.hpp"
#include "ceusp/random.hpp"

namespace ceusp {
namespace {

Tensor uniform_param(Shape shape, Real bound, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor zero_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

std::size_t gate_hidden(std::size_t lead, std::size_t reduction) { return std::max<std::size_t>(1, lead / reduction); }

}  // namespace

void ModelConfig::validate() const {
  if (in_channels == 0 || in_height == 0 || in_width == 0) throw ConfigError("input dimensions must be positive");
  if (widths.empty() || widths.size() != strides.size()) {
    throw ConfigError("model needs one stride per backbone stage");
  }
  for (auto w : widths) {
    if (w == 0) throw ConfigError("stage widths must be positive");
  }
  std::size_t total = 1;
  for (auto s : strides) {
    if (s == 0) throw ConfigError("strides must be positive");
    total *= s;
  }
  if (in_height % total || in_width % total) {
    throw ConfigError("input " + std::to_string(in_height) + "x" + std::to_string(in_width) +
                      " is not divisible by the total stride " + std::to_string(total));
  }
  if (n_streams != 5) throw ConfigError("the head has exactly 5 streams");
  if (bottleneck == 0 || n_classes == 0) throw ConfigError("bottleneck and class count must be positive");
  if (caci_reduction == 0 || c_out() % caci_reduction) {
    throw ConfigError("caci_reduction must divide the final width " + std::to_string(c_out()));
  }
  if (caci_kernel % 2 == 0) throw ConfigError("caci_kernel must be odd");
  for (auto w : widths) {
    if (norm_groups == 0 || w % norm_groups) {
      throw ConfigError("norm_groups=" + std::to_string(norm_groups) + " must divide every stage width");
    }
  }
  for (auto extent : feature_shape()) {
    if (extent < caci_reduction) {
      throw ConfigError("feature map " + shape_str(feature_shape()) + " has an axis smaller than caci_reduction " +
                        std::to_string(caci_reduction));
    }
  }
}

Shape ModelConfig::feature_shape() const {
  std::size_t h = in_height, w = in_width;
  for (auto s : strides) {
    h /= s;
    w /= s;
  }
  return {c_out(), h, w};
}

std::vector<NamedParam> ModelParams::named() const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto p = "backbone.stage" + std::to_string(i) + ".";
    out.push_back({p + "weight", ParamGroup::kBackbone, stages[i].weight});
    out.push_back({p + "bias", ParamGroup::kBackbone, stages[i].bias});
    out.push_back({p + "gamma", ParamGroup::kBackbone, stages[i].gamma});
    out.push_back({p + "beta", ParamGroup::kBackbone, stages[i].beta});
  }
  const auto orders = DimOrder::branch_orders();
  for (std::size_t k = 0; k < 4; ++k) {
    const auto p = "rca." + orders[k].name() + ".channel.";
    out.push_back({p + "w1", ParamGroup::kHead, channel_gates[k].w1});
    out.push_back({p + "b1", ParamGroup::kHead, channel_gates[k].b1});
    out.push_back({p + "w2", ParamGroup::kHead, channel_gates[k].w2});
    out.push_back({p + "b2", ParamGroup::kHead, channel_gates[k].b2});
  }
  for (std::size_t k = 0; k < spatial_gates.size(); ++k) {
    const auto p = spatial_gates.size() == 1 ? std::string("rca.shared.spatial.")
                                             : "rca." + orders[k].name() + ".spatial.";
    out.push_back({p + "weight", ParamGroup::kHead, spatial_gates[k].weight});
    out.push_back({p + "bias", ParamGroup::kHead, spatial_gates[k].bias});
  }
  for (std::size_t s = 0; s < heads.size(); ++s) {
    const auto p = "head.stream" + std::to_string(s) + ".";
    out.push_back({p + "bottleneck_w", ParamGroup::kHead, heads[s].bottleneck_w});
    out.push_back({p + "bottleneck_b", ParamGroup::kHead, heads[s].bottleneck_b});
    out.push_back({p + "classifier_w", ParamGroup::kHead, heads[s].classifier_w});
    out.push_back({p + "classifier_b", ParamGroup::kHead, heads[s].classifier_b});
  }
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& p : named()) n += p.tensor.numel();
  return n;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed, 0x5eed);

  std::size_t cin = config_.in_channels;
  for (auto width : config_.widths) {
    const auto fan_in = static_cast<Real>(cin * 9);
    params_.stages.push_back({uniform_param({width, cin, 3, 3}, std::sqrt(Real{6} / fan_in), rng), zero_param({width}),
                              Tensor::full({width}, 1, true), zero_param({width})});
    cin = width;
  }

  const Shape feat = config_.feature_shape();
  const auto orders = DimOrder::branch_orders();
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t lead = feat[orders[k][0]];
    const std::size_t hidden = gate_hidden(lead, config_.caci_reduction);
    params_.channel_gates[k] = {
        uniform_param({hidden, lead}, Real{1} / std::sqrt(static_cast<Real>(lead)), rng), zero_param({hidden}),
        uniform_param({lead, hidden}, Real{1} / std::sqrt(static_cast<Real>(hidden)), rng), zero_param({lead})};
  }
  const std::size_t k = config_.caci_kernel;
  const std::size_t n_spatial = config_.caci_weight_sharing ? 1 : 4;
  for (std::size_t i = 0; i < n_spatial; ++i) {
    params_.spatial_gates.push_back(
        {uniform_param({1, 2, k, k}, Real{1} / std::sqrt(static_cast<Real>(2 * k * k)), rng), zero_param({1})});
  }

  const std::size_t c = config_.c_out(), nb = config_.bottleneck;
  for (std::size_t s = 0; s < config_.n_streams; ++s) {
    params_.heads.push_back({uniform_param({nb, c}, Real{1} / std::sqrt(static_cast<Real>(c)), rng), zero_param({nb}),
                             uniform_param({config_.n_classes, nb}, Real{1} / std::sqrt(static_cast<Real>(nb)), rng),
                             zero_param({config_.n_classes})});
  }
}

Tensor Model::backbone_forward(const Tensor& x) const {
  const Shape expected{config_.in_channels, config_.in_height, config_.in_width};
  if (x.shape() != expected) {
    throw ShapeError("backbone expects " + shape_str(expected) + ", got " + shape_str(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < params_.stages.size(); ++i) {
    const auto& st = params_.stages[i];
    h = conv2d(h, st.weight, st.bias, {.stride = config_.strides[i], .padding = 1});
    h = relu(group_norm(h, st.gamma, st.beta, config_.norm_groups));
  }
  return h;
}

CaciOutput caci_forward(const Tensor& x, const ChannelGate& channel, const SpatialGate& spatial) {
  if (x.rank() != 3) throw ShapeError("CACI expects a rank-3 map, got " + shape_str(x.shape()));
  const std::size_t lead = x.dim(0);
  if (channel.w1.rank() != 2 || channel.w1.dim(1) != lead) {
    throw ShapeError("CACI channel gate built for " + std::to_string(channel.w1.rank() == 2 ? channel.w1.dim(1) : 0) +
                     " channels, map has " + std::to_string(lead));
  }
  // M_c = sigmoid(MLP(AvgPool(x))), broadcast over the trailing axes.
  auto hidden = relu(linear(global_avg_pool(x), channel.w1, channel.b1));
  auto channel_map = reshape(sigmoid(linear(hidden, channel.w2, channel.b2)), {lead, 1, 1});
  // Spatial map from per-position mean and max over the leading axis.
  const std::size_t pad = spatial.weight.dim(3) / 2;
  auto pooled = concat({channel_avg_pool(x), channel_max_pool(x)});
  auto spatial_map = sigmoid(conv2d(pooled, spatial.weight, spatial.bias, {.stride = 1, .padding = pad}));
  auto scale = mul(channel_map, spatial_map);
  return {mul(scale, x), scale};
}

CaciOutput Model::caci_forward(const Tensor& x, std::size_t branch) const {
  if (branch >= 4) throw RangeError("branch index " + std::to_string(branch));
  const std::size_t lead = x.rank() == 3 ? x.dim(0) : 0;
  if (lead < config_.caci_reduction) {
    throw ConfigError("CACI leading axis " + std::to_string(lead) + " is smaller than the reduction " +
                      std::to_string(config_.caci_reduction));
  }
  return ceusp::caci_forward(x, params_.channel_gates[branch], params_.spatial_gate(branch));
}

RcaOutput Model::rca_forward(const Tensor& f) const {
  RcaOutput out;
  const auto orders = DimOrder::branch_orders();
  for (std::size_t k = 0; k < 4; ++k) {
    auto permuted = permute(f, orders[k]);
    auto [attended, scale] = caci_forward(permuted, k);
    out.branches[k] = inverse_permute(attended, orders[k]);
    out.scales[k] = scale;
    out.fused = k == 0 ? out.branches[k] : add(out.fused, out.branches[k]);
  }
  return out;
}

HeadOutput Model::head_forward(const RcaOutput& rca) const {
  HeadOutput out;
  const std::array<const Tensor*, 5> streams{&rca.fused, &rca.branches[0], &rca.branches[1], &rca.branches[2],
                                             &rca.branches[3]};
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const auto& h = params_.heads[s];
    auto b = linear(global_avg_pool(*streams[s]), h.bottleneck_w, h.bottleneck_b);
    out.logits.push_back(linear(b, h.classifier_w, h.classifier_b));
    out.bottlenecks.push_back(std::move(b));
  }
  return out;
}

ModelOutput Model::forward(const Tensor& x) const {
  ModelOutput out;
  out.feature = backbone_forward(x);
  out.rca = rca_forward(out.feature);
  out.metric = l2_normalize(global_avg_pool(out.rca.fused));
  out.head = head_forward(out.rca);
  return out;
}

Tensor Model::extract_embedding(const Tensor& x) const {
  auto rca = rca_forward(backbone_forward(x));
  return l2_normalize(concat(head_forward(rca).bottlenecks));
}

Tensor Model::attention_map(const Tensor& x) const {
  NoGradGuard guard;
  auto fused = rca_forward(backbone_forward(x)).fused;
  const std::size_t c = fused.dim(0), h = fused.dim(1), w = fused.dim(2);
  std::vector<Real> mag(h * w, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) mag[i] += fused[ch * h * w + i] * fused[ch * h * w + i];
  }
  for (auto& v : mag) v = std::sqrt(v);
  return Tensor::from_data({h, w}, std::move(mag));
}

void Model::load_state(const std::map<std::string, Tensor>& state) {
  auto named = params_.named();
  if (state.size() != named.size()) {
    throw VersionError("checkpoint has " + std::to_string(state.size()) + " tensors, model expects " +
                       std::to_string(named.size()));
  }
  for (auto& p : named) {
    auto it = state.find(p.name);
    if (it == state.end()) throw VersionError("checkpoint lacks parameter " + p.name);
    if (it->second.shape() != p.tensor.shape()) {
      throw VersionError("parameter " + p.name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                         shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    const auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace ceusp
