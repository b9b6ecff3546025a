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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ceusp/dataset.hpp"
#include "ceusp/tensor.hpp"

namespace ceusp {

class Model;

/// Embedded gallery: one unit-norm row per item with its class and location.
struct Gallery {
  std::vector<std::vector<Real>> rows;
  std::vector<int> class_ids;
  std::vector<double> lat;
  std::vector<double> lon;

  std::size_t size() const { return rows.size(); }
};

/// Gallery indices by descending dot product, ties by ascending index.
struct Ranking {
  std::vector<std::size_t> order;
  std::vector<Real> scores;
};

Ranking rank_gallery(const std::vector<Real>& query, const std::vector<std::vector<Real>>& rows);

/// One query's ranked gallery with the information every metric needs.
struct RankedRetrieval {
  int query_class = 0;
  double query_lat = 0;
  double query_lon = 0;
  std::vector<int> ids;  // gallery class ids in rank order
  std::vector<Real> scores;
  std::vector<double> lat;  // gallery coordinates in rank order
  std::vector<double> lon;
};

/// ContractError on an empty gallery or a non unit-norm query.
RankedRetrieval retrieve(const std::vector<Real>& query, int query_class, double query_lat, double query_lon,
                         const Gallery& gallery);

/// 1 when the query's class appears in the top k. RangeError if k exceeds the gallery.
double recall_at_k(const RankedRetrieval& rr, std::size_t k);

/// Mean precision at the ranks of all same-class gallery items.
double average_precision(const RankedRetrieval& rr);

inline constexpr double kSdmScale = 5000.0;

/// Rank-weighted, distance-discounted score over the top k; distances in degrees.
double sdm_at_k(const RankedRetrieval& rr, std::size_t k, double s = kSdmScale);

/// Recall within the top ceil(1%) of the gallery, averaged. RangeError below 100 items.
double r_at_top1(const std::vector<RankedRetrieval>& rrs);

struct MetricsReport {
  double recall1 = 0;
  double recall5 = 0;
  double recall10 = 0;
  std::optional<double> r_top1;  // absent for galleries under 100 items
  double ap = 0;
  std::optional<double> sdm1;  // absent without coordinates
  std::optional<double> sdm3;
  std::optional<double> sdm5;
  std::size_t n_queries = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport summarize(const std::vector<RankedRetrieval>& rrs);

/// Worker count for embedding and retrieval: CEUSP_THREADS when set, else the hardware count.
std::size_t eval_threads();

/// Runs `fn(i)` for i in [0, n) across eval_threads() workers, each under NoGradGuard.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Unit-norm embeddings of `samples`, optionally transformed first.
std::vector<std::vector<Real>> embed_all(const Model& model, const std::vector<Sample>& samples,
                                         const std::function<Tensor(const Tensor&)>& transform = {});

Gallery build_gallery(const Model& model, const std::vector<Sample>& gallery);

/// Drone queries against a satellite gallery.
MetricsReport evaluate_queries(const Model& model, const std::vector<Sample>& queries, const Gallery& gallery,
                               const std::function<Tensor(const Tensor&)>& transform = {});

MetricsReport evaluate_split(const Model& model, const DatasetSplit& split);

struct MetricsRow {
  std::string split = "query";
  std::string mode = "none";
  std::size_t pad_k = 0;
  MetricsReport report;
};

/// metrics.csv; absent values written as NA, reals with fixed 9 decimals.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

/// Shift amounts are given in pixels of a `reference_width` image and
/// rescaled to the data: round(k * W / reference_width).
struct SweepOptions {
  std::vector<std::size_t> ks{0, 10, 20, 30, 40, 50, 60};
  std::vector<ShiftMode> modes{ShiftMode::kBlack, ShiftMode::kFlip};
  std::size_t reference_width = 256;
};

std::size_t scaled_shift(std::size_t k, std::size_t width, std::size_t reference_width);

struct SweepCell {
  ShiftMode mode = ShiftMode::kBlack;
  std::size_t k = 0;
  std::size_t pixels = 0;
  MetricsReport report;
  double ap_delta = 0;  // AP(k) - AP(0) of the same mode
};

std::vector<SweepCell> robustness_sweep(const Model& model, const DatasetSplit& split,
                                        const SweepOptions& options = {});

std::vector<MetricsRow> sweep_rows(const std::vector<SweepCell>& cells);

/// Channel-wise L2 magnitude of the fused attention map, shape (H', W').
Tensor export_attention(const Model& model, const Tensor& x);
void export_attention(const Model& model, const Tensor& x, const std::filesystem::path& path);

}  // namespace ceusp
