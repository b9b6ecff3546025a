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

#include "ceusp/gradcheck.hpp"

#include <algorithm>
#include <functional>

#include "ceusp/losses.hpp"
#include "ceusp/model.hpp"
#include "ceusp/ops.hpp"
#include "ceusp/random.hpp"
#include "ceusp/tensor_io.hpp"

namespace ceusp {
namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Weighted sum with fixed positive weights, so every output entry matters.
Tensor project(const Tensor& y, Rng& weights) { return sum(mul(y, uniform_tensor(y.shape(), weights, 0.5, 1.5))); }

ModelConfig check_config() {
  ModelConfig c;
  c.in_channels = 3;
  c.in_height = c.in_width = 4;
  c.widths = {4};
  c.strides = {1};
  c.caci_reduction = 2;
  c.caci_kernel = 3;
  c.bottleneck = 6;
  c.n_classes = 3;
  return c;
}

}  // namespace

std::vector<GradCheckResult> gradient_suite(std::uint64_t seed, Real step) {
  Rng rng(seed);
  auto t = [&](Shape s, double lo = -2, double hi = 2) { return uniform_tensor(std::move(s), rng, lo, hi); };
  const auto x = t({3, 5, 4}), y = t({3, 5, 4}), ch = t({3, 1, 1});
  const auto v = t({6}), u = t({6}), w = t({4, 6}), b = t({4});
  const auto kw = t({2, 3, 3, 3}), kb = t({2}), gamma = t({3}), beta = t({3});
  const auto pos = t({6}, 0.2, 2.0);
  const std::uint64_t proj_seed = rng.next();
  auto P = [proj_seed](const Tensor& out) {
    Rng weights(proj_seed);
    return project(out, weights);
  };

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> leaves;
  };
  std::vector<Case> cases{
      {"permute", [&] { return P(permute(x, DimOrder::WCH())); }, {x}},
      {"inverse_permute", [&] { return P(inverse_permute(x, DimOrder::HWC())); }, {x}},
      {"reshape", [&] { return P(reshape(x, {15, 4})); }, {x}},
      {"concat", [&] { return P(concat({x, y})); }, {x, y}},
      {"stack", [&] { return P(stack({v, u})); }, {v, u}},
      {"select", [&] { return mul(select(v, 2), select(u, 3)); }, {v, u}},
      {"add", [&] { return P(add(x, ch)); }, {x, ch}},
      {"sub", [&] { return P(sub(x, y)); }, {x, y}},
      {"mul", [&] { return P(mul(x, ch)); }, {x, ch}},
      {"scale", [&] { return P(scale(x, Real{-1.7})); }, {x}},
      {"add_scalar", [&] { return P(add_scalar(x, Real{0.3})); }, {x}},
      {"relu", [&] { return P(relu(x)); }, {x}},
      {"sigmoid", [&] { return P(sigmoid(x)); }, {x}},
      {"exp", [&] { return P(exp(x)); }, {x}},
      {"log", [&] { return P(log(pos)); }, {pos}},
      {"clamp_min", [&] { return P(clamp_min(x, Real{0.1})); }, {x}},
      {"sum", [&] { return mul(sum(x), sum(x)); }, {x}},
      {"mean", [&] { return mul(mean(x), mean(x)); }, {x}},
      {"dot", [&] { return dot(v, u); }, {v, u}},
      {"softmax", [&] { return P(softmax(v)); }, {v}},
      {"log_softmax", [&] { return P(log_softmax(v)); }, {v}},
      {"l2_normalize", [&] { return P(l2_normalize(v)); }, {v}},
      {"linear", [&] { return P(linear(v, w, b)); }, {v, w, b}},
      {"conv2d", [&] { return P(conv2d(x, kw, kb, {.stride = 2, .padding = 1})); }, {x, kw, kb}},
      {"global_avg_pool", [&] { return P(global_avg_pool(x)); }, {x}},
      {"channel_avg_pool", [&] { return P(channel_avg_pool(x)); }, {x}},
      {"channel_max_pool", [&] { return P(channel_max_pool(x)); }, {x}},
      {"channel_norm", [&] { return P(channel_norm(x, gamma, beta)); }, {x, gamma, beta}},
      {"group_norm", [&] { return P(group_norm(x, gamma, beta, 1)); }, {x, gamma, beta}},
  };

  Model model(check_config(), rng.next());
  const auto f = t({4, 4, 4});
  auto& gates = model.params();
  std::vector<Tensor> caci_leaves{f};
  for (const auto* p : {&gates.channel_gates[0].w1, &gates.channel_gates[0].b1, &gates.channel_gates[0].w2,
                        &gates.channel_gates[0].b2, &gates.spatial_gates[0].weight, &gates.spatial_gates[0].bias}) {
    caci_leaves.push_back(*p);
  }
  cases.push_back({"caci", [&] { return P(model.caci_forward(f, 0).attended); }, caci_leaves});
  std::vector<Tensor> rca_leaves{f};
  for (const auto& np : gates.named()) {
    if (np.name.rfind("rca.", 0) == 0) rca_leaves.push_back(np.tensor);
  }
  cases.push_back({"rca", [&] { return P(model.rca_forward(f).fused); }, rca_leaves});

  std::vector<Tensor> raw, drone_logits, sat_logits;
  for (int i = 0; i < 4; ++i) raw.push_back(t({5}));
  for (int s = 0; s < 5; ++s) {
    drone_logits.push_back(t({3}));
    sat_logits.push_back(t({3}));
  }
  const std::vector<int> labels{0, 0, 1, 1};
  std::vector<Tensor> loss_leaves = raw;
  loss_leaves.insert(loss_leaves.end(), drone_logits.begin(), drone_logits.end());
  loss_leaves.insert(loss_leaves.end(), sat_logits.begin(), sat_logits.end());
  cases.push_back({"total_loss",
                   [&] {
                     std::vector<Tensor> unit;
                     for (const auto& r : raw) unit.push_back(l2_normalize(r));
                     return total_loss(cross_entropy(drone_logits, 1), hard_mining_triplet(unit, labels, Real{0.3}),
                                       mutual_kl(drone_logits, sat_logits))
                         .total;
                   },
                   loss_leaves});

  std::vector<GradCheckResult> results;
  for (const auto& c : cases) results.push_back({c.name, grad_check(c.f, c.leaves, step)});
  return results;
}

Real max_error(const std::vector<GradCheckResult>& results) {
  Real m = 0;
  for (const auto& r : results) m = std::max(m, r.max_rel_err);
  return m;
}

}  // namespace ceusp
