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

#include "ceusp/losses.hpp"

#include <cmath>
#include <map>

#include "ceusp/errors.hpp"
#include "ceusp/ops.hpp"

namespace ceusp {

Tensor cross_entropy(const std::vector<Tensor>& stream_logits, std::size_t label) {
  if (stream_logits.empty()) throw ContractError("cross_entropy needs at least one stream");
  std::vector<Tensor> terms;
  for (const auto& logits : stream_logits) {
    if (logits.rank() != 1) throw ShapeError("logits must be vectors, got " + shape_str(logits.shape()));
    if (label >= logits.numel()) {
      throw RangeError("label " + std::to_string(label) + " outside " + std::to_string(logits.numel()) + " classes");
    }
    terms.push_back(select(log_softmax(logits), label));
  }
  return scale(sum(stack(terms)), Real{-1} / static_cast<Real>(terms.size()));
}

Tensor hard_mining_triplet(const std::vector<Tensor>& embeddings, const std::vector<int>& labels, Real margin,
                           TripletMining mining) {
  const std::size_t n = embeddings.size();
  if (n != labels.size()) throw ContractError("one label per embedding required");
  std::map<int, std::size_t> members;
  for (int l : labels) ++members[l];
  if (members.size() < 2) throw ContractError("triplet loss needs at least two classes in the batch");
  for (const auto& [label, count] : members) {
    if (count < 2) throw ContractError("class " + std::to_string(label) + " has no positive in the batch");
  }
  for (const auto& e : embeddings) {
    Real sq = 0;
    for (Real v : e.data()) sq += v * v;
    if (std::abs(sq - 1) > 1e-6) throw ContractError("triplet embeddings must be unit-norm");
  }

  // Pairwise similarities by value, for selection only.
  std::vector<Real> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      const auto a = embeddings[i].data(), b = embeddings[j].data();
      for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
      sim[i * n + j] = s;
    }
  }

  std::vector<Tensor> hinges;
  std::vector<Real> hinge_values;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos == n || sim[a * n + j] < sim[a * n + pos]) pos = j;  // largest distance
      } else if (neg == n || sim[a * n + j] > sim[a * n + neg]) {
        neg = j;  // smallest distance
      }
    }
    // d(a,p) - d(a,n) = <a,n> - <a,p>
    auto gap = sub(dot(embeddings[a], embeddings[neg]), dot(embeddings[a], embeddings[pos]));
    hinges.push_back(relu(add_scalar(gap, margin)));
    hinge_values.push_back(hinges.back().item());
  }

  if (mining == TripletMining::kBatchHardest) {
    std::size_t worst = 0;
    for (std::size_t a = 1; a < n; ++a) {
      if (hinge_values[a] > hinge_values[worst]) worst = a;
    }
    return hinges[worst];
  }
  return mean(stack(hinges));
}

Tensor mutual_kl(const std::vector<Tensor>& drone_logits, const std::vector<Tensor>& satellite_logits, Real floor) {
  if (drone_logits.empty() || drone_logits.size() != satellite_logits.size()) {
    throw ContractError("mutual_kl needs matching, non-empty stream lists");
  }
  std::vector<Tensor> terms;
  for (std::size_t s = 0; s < drone_logits.size(); ++s) {
    if (drone_logits[s].shape() != satellite_logits[s].shape()) {
      throw ShapeError("stream " + std::to_string(s) + " logits differ in shape");
    }
    auto pd = clamp_min(softmax(drone_logits[s]), floor);
    auto ps = clamp_min(softmax(satellite_logits[s]), floor);
    auto log_ratio = sub(log(pd), log(ps));
    // KL(d||s) + KL(s||d) = sum (pd - ps) * (log pd - log ps)
    terms.push_back(add(sum(mul(pd, log_ratio)), sum(mul(ps, scale(log_ratio, Real{-1})))));
  }
  return mean(stack(terms));
}

LossReport LossTerms::report() const { return {rpt.item(), mtc.item(), kl.item(), total.item()}; }

LossTerms total_loss(Tensor rpt, Tensor mtc, Tensor kl) {
  for (const auto* t : {&rpt, &mtc, &kl}) {
    if (t->numel() != 1) throw ContractError("loss terms must be scalars");
  }
  auto total = add(add(rpt, mtc), kl);
  return {std::move(rpt), std::move(mtc), std::move(kl), std::move(total)};
}

}  // namespace ceusp
