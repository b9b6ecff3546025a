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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "ceusp/dataset.hpp"
#include "ceusp/errors.hpp"
#include "ceusp/tensor_io.hpp"

using namespace ceusp;
namespace fs = std::filesystem;

namespace {

Tensor random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, Real lo = -1, Real hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> dist(lo, hi);
  std::vector<Real> v(c * h * w);
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data({c, h, w}, std::move(v));
}

SyntheticOptions small_options() {
  SyntheticOptions o;
  o.n_classes = 9;
  o.height = 8;
  o.width = 8;
  o.seed = 3;
  return o;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ceusp_dataset_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Two train locations and one query/gallery location.
std::vector<std::string> fixture_rows() {
  return {"0,drone,30.0,120.0,train/0/drone_0.cten",    "0,satellite,30.0,120.0,train/0/satellite_0.cten",
          "1,drone,30.0,120.0001,train/1/drone_0.cten", "1,satellite,30.0,120.0001,train/1/satellite_0.cten",
          "2,drone,30.5,120.0,query/2/drone_0.cten",    "2,satellite,30.5,120.0,gallery/2/satellite_0.cten"};
}

void materialize(const fs::path& root, const std::vector<std::string>& rows) {
  std::ofstream csv(root / "metadata.csv");
  csv << "class_id,view,lat,lon,relpath\n";
  std::uint64_t seed = 1;
  for (const auto& r : rows) {
    csv << r << "\n";
    const auto relpath = r.substr(r.rfind(',') + 1);
    fs::create_directories((root / relpath).parent_path());
    write_cten(root / relpath, random_image(3, 8, 8, seed++));
  }
}

// Reference index map for the shift: out[..., j] = in[..., j - k] for j >= k,
// and for j < k either zero or in[..., k - 1 - j].
std::vector<Real> shift_oracle(const Tensor& x, std::size_t k, ShiftMode mode) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<Real> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t j = 0; j < w; ++j) {
        Real v = 0;
        if (j >= k) v = x[(ch * h + y) * w + (j - k)];
        else if (mode == ShiftMode::kFlip) v = x[(ch * h + y) * w + (k - 1 - j)];
        out[(ch * h + y) * w + j] = v;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Synthetic, GridGeometry) {
  SyntheticOptions o;
  o.n_classes = 64;
  o.grid_spacing_deg = 1e-4;
  auto split = generate_synthetic(o);
  validate(split);
  EXPECT_EQ(split.train_classes().size(), 64u);
  EXPECT_EQ(split.gallery_classes().size(), 64u);
  EXPECT_EQ(split.query.size(), 128u);
  std::map<int, std::pair<double, double>> coords;
  for (const auto& s : split.gallery) coords[s.meta.class_id] = {s.meta.lat, s.meta.lon};
  std::set<double> lats, lons;
  for (const auto& [id, a] : coords) {
    lats.insert(a.first);
    lons.insert(a.second);
    double best = 1e9;
    for (const auto& [other, b] : coords) {
      if (other != id) best = std::min(best, std::hypot(a.first - b.first, a.second - b.second));
    }
    EXPECT_NEAR(best, 1e-4, 1e-12);
  }
  EXPECT_EQ(lats.size(), 8u);
  EXPECT_EQ(lons.size(), 8u);
}

TEST(Synthetic, SameSeedGivesIdenticalPayloads) {
  auto a = generate_synthetic(small_options());
  auto b = generate_synthetic(small_options());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(encode_cten(a.train[i].image), encode_cten(b.train[i].image));
  }
  auto o = small_options();
  o.seed = 4;
  EXPECT_NE(generate_synthetic(o).train[0].image.to_vector(), a.train[0].image.to_vector());
}

TEST(Synthetic, ZeroNoiseViewsAreTransformsOfOneLatent) {
  auto o = small_options();
  o.view_noise = 0;
  auto split = generate_synthetic(o);
  for (int cls = 0; cls < 3; ++cls) {
    const Sample* sat = nullptr;
    std::vector<const Sample*> drones;
    for (const auto& s : split.train) {
      if (s.meta.class_id != cls) continue;
      if (s.meta.view == View::kSatellite) sat = &s;
      else drones.push_back(&s);
    }
    ASSERT_NE(sat, nullptr);
    ASSERT_EQ(drones.size(), 2u);
    // Invert the satellite affine map to recover the latent, then re-derive the drone view.
    const auto shape = sat->image.shape();
    auto gains = synthetic_satellite_transform(Tensor::full(shape, 1)).to_vector();
    auto biases = synthetic_satellite_transform(Tensor::zeros(shape)).to_vector();
    std::vector<Real> latent(sat->image.numel());
    for (std::size_t i = 0; i < latent.size(); ++i) latent[i] = (sat->image[i] - biases[i]) / (gains[i] - biases[i]);
    auto expected = synthetic_drone_transform(Tensor::from_data(shape, latent));
    for (const auto* d : drones) {
      for (std::size_t i = 0; i < expected.numel(); ++i) EXPECT_NEAR(d->image[i], expected[i], 1e-12);
    }
  }
}

TEST(Synthetic, RejectsBadConfig) {
  auto o = small_options();
  o.n_classes = 3;
  EXPECT_THROW(generate_synthetic(o), ConfigError);
  o = small_options();
  o.grid_spacing_deg = 0;
  EXPECT_THROW(generate_synthetic(o), ConfigError);
  o = small_options();
  o.height = 0;
  EXPECT_THROW(generate_synthetic(o), ConfigError);
}

TEST(LoadDataset, WellFormedFixture) {
  auto root = scratch_dir("ok");
  materialize(root, fixture_rows());
  auto split = load_dataset(root);
  EXPECT_EQ(split.train_classes(), (std::vector<int>{0, 1}));
  EXPECT_EQ(split.query_classes(), (std::vector<int>{2}));
  EXPECT_EQ(split.gallery_classes(), (std::vector<int>{2}));
  EXPECT_TRUE(split.has_coordinates());
}

TEST(LoadDataset, SaveThenLoadPreservesPayloads) {
  auto root = scratch_dir("roundtrip");
  auto split = generate_synthetic(small_options());
  save_dataset(split, root);
  auto back = load_dataset(root);
  ASSERT_EQ(back.query.size(), split.query.size());
  for (std::size_t i = 0; i < split.query.size(); ++i) {
    EXPECT_EQ(back.query[i].meta.relpath, split.query[i].meta.relpath);
    EXPECT_EQ(back.query[i].meta.lat, split.query[i].meta.lat);
    EXPECT_EQ(back.query[i].image.to_vector(), split.query[i].image.to_vector());
  }
  EXPECT_TRUE(fs::exists(root / "gallery" / std::to_string(split.gallery[0].meta.class_id) / "satellite_0.cten"));
}

TEST(LoadDataset, SingleViewClassIsRejectedByName) {
  auto root = scratch_dir("single_view");
  auto rows = fixture_rows();
  rows[1] = "0,drone,30.0,120.0,train/0/drone_1.cten";
  materialize(root, rows);
  try {
    load_dataset(root);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("class 0"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, QueryClassMissingFromGalleryIsRejected) {
  auto root = scratch_dir("orphan_query");
  auto rows = fixture_rows();
  rows.push_back("3,drone,30.6,120.0,query/3/drone_0.cten");
  rows.push_back("3,satellite,30.6,120.0,train/3/satellite_0.cten");
  materialize(root, rows);
  EXPECT_THROW(load_dataset(root), DataError);
}

TEST(LoadDataset, StructuralErrors) {
  EXPECT_THROW(load_dataset(scratch_dir("missing")), DataError);

  auto dup = scratch_dir("dup");
  auto rows = fixture_rows();
  rows.push_back(rows[0]);
  materialize(dup, rows);
  EXPECT_THROW(load_dataset(dup), DataError);

  auto coords = scratch_dir("coords");
  rows = fixture_rows();
  rows[1] = "0,satellite,30.1,120.0,train/0/satellite_0.cten";
  materialize(coords, rows);
  EXPECT_THROW(load_dataset(coords), DataError);
}

TEST(LoadDataset, MissingCoordinatesAreAllowedUniformly) {
  auto root = scratch_dir("no_gps");
  std::vector<std::string> rows;
  for (const auto& r : fixture_rows()) {
    const auto first = r.find(','), second = r.find(',', first + 1);
    const auto fourth = r.find(',', r.find(',', second + 1) + 1);
    rows.push_back(r.substr(0, second + 1) + "," + r.substr(fourth));
  }
  materialize(root, rows);
  EXPECT_FALSE(load_dataset(root).has_coordinates());
}

TEST(Augment, ZeroOffsetNoFlipIsIdentity) {
  auto x = random_image(3, 16, 16, 11);
  EXPECT_EQ(augment(x, AugmentDraw{0, 0, false}).to_vector(), x.to_vector());
}

TEST(Augment, FlipIsAnInvolution) {
  auto x = random_image(3, 16, 12, 12);
  const AugmentDraw flip{0, 0, true};
  auto once = augment(x, flip);
  EXPECT_NE(once.to_vector(), x.to_vector());
  EXPECT_EQ(augment(once, flip).to_vector(), x.to_vector());
}

TEST(Augment, ShapePreservedOverSeeds) {
  auto x = random_image(3, 16, 16, 13);
  bool saw_flip = false, saw_shift = false;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto draw = draw_augment(seed, 2);
    EXPECT_LE(std::abs(draw.dx), 2);
    EXPECT_LE(std::abs(draw.dy), 2);
    saw_flip = saw_flip || draw.flip;
    saw_shift = saw_shift || draw.dx != 0;
    EXPECT_EQ(augment(x, seed).shape(), x.shape());
  }
  EXPECT_TRUE(saw_flip);
  EXPECT_TRUE(saw_shift);
  EXPECT_THROW(augment(random_image(3, 4, 16, 1), 0), ContractError);
}

TEST(PositionShift, ZeroShiftIsIdentity) {
  auto x = random_image(3, 10, 12, 14);
  EXPECT_EQ(position_shift(x, 0, ShiftMode::kBlack).to_vector(), x.to_vector());
  EXPECT_EQ(position_shift(x, 0, ShiftMode::kFlip).to_vector(), x.to_vector());
}

TEST(PositionShift, BlackPadIntroducesLeftZeros) {
  auto x = random_image(3, 16, 64, 15, 1, 2);  // strictly positive, so zeros come only from padding
  auto y = position_shift(x, 10, ShiftMode::kBlack);
  std::size_t zeros = 0;
  for (Real v : y.data()) zeros += v == 0;
  EXPECT_EQ(zeros, 10u * 16 * 3);
  for (std::size_t row = 0; row < 3 * 16; ++row) {
    for (std::size_t col = 0; col < 10; ++col) EXPECT_EQ(y[row * 64 + col], 0);
  }
}

TEST(PositionShift, MatchesIndexOracleForEveryK) {
  auto x = random_image(2, 5, 9, 16);
  for (std::size_t k = 0; k < 9; ++k) {
    for (auto mode : {ShiftMode::kBlack, ShiftMode::kFlip}) {
      EXPECT_EQ(position_shift(x, k, mode).to_vector(), shift_oracle(x, k, mode)) << k;
    }
  }
  // k = W - 1 in flip mode: left W-1 columns mirror the original ones, original column 0 lands last.
  auto y = position_shift(x, 8, ShiftMode::kFlip);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y[j], x[7 - j]);
  EXPECT_EQ(y[8], x[0]);
}

TEST(PositionShift, ChangedEntriesBoundedByShift) {
  auto x = random_image(3, 8, 64, 17, 1, 2);
  for (std::size_t k = 0; k <= 60; k += 10) {
    auto y = position_shift(x, k, ShiftMode::kBlack);
    EXPECT_EQ(y.shape(), x.shape());
    // Left strip always differs; beyond it entries are the original shifted right.
    for (std::size_t row = 0; row < 3 * 8; ++row) {
      for (std::size_t col = k; col < 64; ++col) EXPECT_EQ(y[row * 64 + col], x[row * 64 + col - k]);
    }
  }
}

TEST(PositionShift, ShiftAtOrBeyondWidthIsRangeError) {
  auto x = random_image(1, 8, 8, 18);
  EXPECT_THROW(position_shift(x, 8, ShiftMode::kBlack), RangeError);
  EXPECT_THROW(position_shift(x, 9, ShiftMode::kFlip), RangeError);
}
