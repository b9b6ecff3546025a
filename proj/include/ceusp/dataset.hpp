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
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ceusp/tensor.hpp"

namespace ceusp {

enum class View { kDrone, kSatellite };

std::string view_name(View v);
View parse_view(const std::string& s);

/// One image record. Coordinates are degrees; NaN when the source data
/// carries no GPS (University-1652 style).
struct SampleMeta {
  int class_id = 0;
  View view = View::kDrone;
  double lat = 0;
  double lon = 0;
  std::string relpath;

  bool has_coordinates() const;
};

struct Sample {
  SampleMeta meta;
  Tensor image;  // (C, H, W)
};

/// Train/query/gallery partitions. Query holds drone views, gallery holds
/// satellite views of the test locations.
struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> query;
  std::vector<Sample> gallery;

  std::vector<int> train_classes() const;
  std::vector<int> query_classes() const;
  std::vector<int> gallery_classes() const;
  bool has_coordinates() const;
  Shape image_shape() const;
};

/// Checks every split invariant; DataError naming the offending class.
void validate(const DatasetSplit& split);

struct SyntheticOptions {
  int n_classes = 64;             // per split (train and test each get their own grid)
  double grid_spacing_deg = 1e-4;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double view_noise = 0.05;
  std::uint64_t seed = 0;
  int drones_per_class = 2;
  /// Weight of the shared geographic field in each location's pattern;
  /// neighbours on the grid overlap through it.
  double field_weight = 0.5;
};

/// Fixed per-view transforms applied to a location's latent pattern
/// (C, H, W) before per-sample noise.
Tensor synthetic_satellite_transform(const Tensor& latent);
Tensor synthetic_drone_transform(const Tensor& latent);

/// Deterministic synthetic paired-view dataset on two lat/lon grids.
DatasetSplit generate_synthetic(const SyntheticOptions& options);

/// Reads root/metadata.csv (class_id,view,lat,lon,relpath) and every CTEN
/// payload it names. The split of a row is the first component of relpath.
DatasetSplit load_dataset(const std::filesystem::path& root);

/// Writes root/{train,query,gallery}/<class_id>/<view>_<n>.cten plus
/// metadata.csv. Relpaths in `split` are reassigned.
void save_dataset(DatasetSplit& split, const std::filesystem::path& root);

// Image transforms on (C, H, W).

struct AugmentDraw {
  long dy = 0;  // crop offset relative to the unpadded frame
  long dx = 0;
  bool flip = false;
};

/// Zero-pad by `pad`, crop back to (H, W) at the drawn offset, then
/// optionally mirror horizontally.
Tensor augment(const Tensor& x, const AugmentDraw& draw);
AugmentDraw draw_augment(std::uint64_t seed, long pad);
Tensor augment(const Tensor& x, std::uint64_t seed, long pad = 2);

enum class ShiftMode { kBlack, kFlip };
std::string shift_mode_name(ShiftMode m);

/// Content moves right by k columns; the rightmost k are dropped. Columns
/// [0, k) become zeros (black) or the mirror of original columns [0, k)
/// (flip). RangeError when k >= W.
Tensor position_shift(const Tensor& x, std::size_t k, ShiftMode mode);

}  // namespace ceusp
