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

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ceusp/dataset.hpp"
#include "ceusp/errors.hpp"
#include "ceusp/tensor.hpp"

namespace ceusp {

class Model;

/// Fractions of the negative slots drawn by geographic distance (GDS),
/// feature similarity (FSS) and uniformly at random (RS).
struct SamplingRatios {
  double gds = 0;
  double fss = 0;
  double rs = 1;

  friend bool operator==(const SamplingRatios&, const SamplingRatios&) = default;
};

struct SlotQuota {
  std::size_t gds = 0;
  std::size_t fss = 0;
  std::size_t rs = 0;

  std::size_t total() const { return gds + fss + rs; }
  friend bool operator==(const SlotQuota&, const SlotQuota&) = default;
};

enum class SamplingStrategy {
  kDynamic,  // random warm-up, then early and late mixed phases
  kRandom,   // RS only
};

struct SamplerConfig {
  std::size_t batch_classes = 32;
  int init_epoch = 20;
  int late_phase_epoch = 70;
  int refresh_interval = 6;
  SamplingRatios early{0.50, 0.25, 0.25};
  SamplingRatios late{0.25, 0.50, 0.25};
  SamplingStrategy strategy = SamplingStrategy::kDynamic;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Active ratios at `epoch`: pure random before init_epoch, then the early
/// mix, then the late mix from late_phase_epoch on.
SamplingRatios phase_ratios(int epoch, const SamplerConfig& config);

/// Negative-slot counts for a batch of `batch_classes`: largest-remainder
/// rounding of B * ratio (ties to GDS, then FSS), after which the anchor
/// takes one slot from RS (or FSS, then GDS, when RS is empty). Sums to B-1.
SlotQuota slot_quota(const SamplingRatios& ratios, std::size_t batch_classes);

struct ClassLocation {
  int class_id = 0;
  double lat = 0;
  double lon = 0;
};

/// One location per training class; NaN coordinates when GPS is absent.
std::vector<ClassLocation> class_locations(const std::vector<Sample>& samples);

/// The k classes nearest to `anchor` in (lat, lon) degrees, ties by class id.
std::vector<int> nearest_geo(int anchor, const std::vector<ClassLocation>& classes, std::size_t k);

/// Per-class unit-norm satellite embeddings plus the epoch they were computed.
struct EmbeddingTable {
  std::vector<int> class_ids;
  std::vector<std::vector<Real>> rows;
  int stamp = 0;

  /// Throws StaleTableError once epoch - stamp reaches the refresh interval.
  void check_fresh(int epoch, int refresh_interval) const;
};

class StaleTableError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// The k classes most cosine-similar to `anchor`, ties by class id.
std::vector<int> nearest_feat(int anchor, const EmbeddingTable& table, std::size_t k, int epoch,
                              int refresh_interval);

/// Whether the trainer must recompute the table before planning `epoch`.
bool refresh_due(int epoch, const EmbeddingTable* table, const SamplerConfig& config);

/// Embeds each training class's first satellite view.
EmbeddingTable refresh_similarity(const Model& model, const std::vector<Sample>& train, int epoch);

enum class SlotSource { kAnchor, kGds, kFss, kRs };
std::string slot_source_name(SlotSource s);

struct PlanSlot {
  int class_id = 0;
  SlotSource source = SlotSource::kAnchor;
};

struct BatchPlan {
  std::vector<PlanSlot> slots;

  SlotQuota tag_counts() const;
  std::vector<int> class_ids() const;
};

/// One batch per training class: a seeded shuffle picks the anchor order,
/// then B-1 negatives are drawn by the active quota. Without coordinates
/// the GDS share moves to FSS. `table` may be null while no FSS slots are due.
std::vector<BatchPlan> build_epoch_plan(int epoch, const std::vector<ClassLocation>& classes,
                                        const EmbeddingTable* table, const SamplerConfig& config);

/// CSV rows epoch,batch,slot,class_id,tag (header written when `header`).
void write_sample_audit(std::ostream& out, int epoch, const std::vector<BatchPlan>& plans, bool header = true);

}  // namespace ceusp
