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

namespace ceusp {

struct LossReport {
  Real l_rpt = 0;
  Real l_mtc = 0;
  Real l_kl = 0;
  Real total = 0;
};

/// Mean over streams of -log softmax(logits_s)[label].
Tensor cross_entropy(const std::vector<Tensor>& stream_logits, std::size_t label);

enum class TripletMining {
  kPerAnchor,     // hardest positive and negative per anchor, averaged over anchors
  kBatchHardest,  // the single largest hinge in the batch
};

/// Hard-mining triplet loss on unit-norm embeddings with cosine distance
/// d(a, b) = 1 - <a, b>. Every label must occur at least twice and at
/// least two labels must be present (ContractError otherwise).
Tensor hard_mining_triplet(const std::vector<Tensor>& embeddings, const std::vector<int>& labels, Real margin,
                           TripletMining mining = TripletMining::kPerAnchor);

/// Symmetric KL between drone and satellite class distributions, averaged
/// over streams. Probabilities are floored at `floor` before the log.
Tensor mutual_kl(const std::vector<Tensor>& drone_logits, const std::vector<Tensor>& satellite_logits,
                 Real floor = Real{1e-12});

struct LossTerms {
  Tensor rpt, mtc, kl, total;
  LossReport report() const;
};

/// Unweighted sum of the three terms.
LossTerms total_loss(Tensor rpt, Tensor mtc, Tensor kl);

}  // namespace ceusp
