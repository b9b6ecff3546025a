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

#include "ceusp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ceusp/errors.hpp"
#include "ceusp/random.hpp"
#include "ceusp/tensor_io.hpp"

namespace ceusp {

std::string view_name(View v) { return v == View::kDrone ? "drone" : "satellite"; }

View parse_view(const std::string& s) {
  if (s == "drone") return View::kDrone;
  if (s == "satellite") return View::kSatellite;
  throw DataError("unknown view '" + s + "'");
}

bool SampleMeta::has_coordinates() const { return std::isfinite(lat) && std::isfinite(lon); }

namespace {

std::vector<int> classes_of(const std::vector<Sample>& samples) {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.meta.class_id);
  return {ids.begin(), ids.end()};
}

using Image = std::vector<Real>;

// 3x3 box blur with edge clamping, applied per channel.
Image box_blur(const Image& in, std::size_t c, std::size_t h, std::size_t w) {
  Image out(in.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        Real acc = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const auto yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
            const auto xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
            acc += in[(ch * h + yy) * w + xx];
          }
        }
        out[(ch * h + y) * w + x] = acc / 9;
      }
    }
  }
  return out;
}

// Smooth noise with unit standard deviation.
Image smooth_noise(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  Image img(c * h * w);
  for (auto& v : img) v = static_cast<Real>(rng.normal());
  img = box_blur(box_blur(img, c, h, w), c, h, w);
  Real mu = 0, sq = 0;
  for (Real v : img) mu += v;
  mu /= static_cast<Real>(img.size());
  for (Real v : img) sq += (v - mu) * (v - mu);
  const Real sd = std::sqrt(sq / static_cast<Real>(img.size()));
  for (auto& v : img) v = (v - mu) / sd;
  return img;
}

Image satellite_view(const Image& latent, std::size_t c, std::size_t hw) {
  Image out(latent.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Real gain = Real{0.9} + Real{0.1} * static_cast<Real>(ch % 3);
    const Real bias = Real{0.1} - Real{0.1} * static_cast<Real>(ch % 3);
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = gain * latent[ch * hw + i] + bias;
  }
  return out;
}

Image drone_view(const Image& latent, std::size_t c, std::size_t h, std::size_t w) {
  const Image blurred = box_blur(latent, c, h, w);
  const std::size_t hw = h * w;
  Image out(latent.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t next = (ch + 1) % c;
    for (std::size_t i = 0; i < hw; ++i) {
      const Real mixed = Real{0.8} * blurred[ch * hw + i] + Real{0.2} * blurred[next * hw + i];
      out[ch * hw + i] = Real{1.3} * mixed + Real{0.05};
    }
  }
  return out;
}

struct GridSplit {
  std::vector<Sample> drones;
  std::vector<Sample> satellites;
};

GridSplit generate_grid(const SyntheticOptions& o, const std::string& split_name, int first_id, double lat0,
                        double lon0, std::uint64_t stream) {
  const std::size_t c = o.channels, h = o.height, w = o.width;
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(o.n_classes))));
  const std::size_t step_y = std::max<std::size_t>(1, h / 2), step_x = std::max<std::size_t>(1, w / 2);
  const std::size_t fh = side * step_y + h, fw = side * step_x + w;

  Rng field_rng(o.seed, stream);
  const Image field = smooth_noise(field_rng, c, fh, fw);

  GridSplit out;
  for (int k = 0; k < o.n_classes; ++k) {
    const auto row = static_cast<std::size_t>(k) / side, col = static_cast<std::size_t>(k) % side;
    Rng own_rng(o.seed, stream * 1000003 + static_cast<std::uint64_t>(k) + 1);
    const Image own = smooth_noise(own_rng, c, h, w);
    Image latent(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const Real shared = field[(ch * fh + row * step_y + y) * fw + col * step_x + x];
          const std::size_t i = (ch * h + y) * w + x;
          latent[i] = static_cast<Real>(o.field_weight) * shared + static_cast<Real>(1 - o.field_weight) * own[i];
        }
      }
    }

    const int class_id = first_id + k;
    const double lat = lat0 + static_cast<double>(row) * o.grid_spacing_deg;
    const double lon = lon0 + static_cast<double>(col) * o.grid_spacing_deg;
    auto emit = [&](View view, int index, Image img, std::vector<Sample>& dst) {
      Rng noise_rng(o.seed, (stream + 7) * 7919 + static_cast<std::uint64_t>(class_id) * 31 +
                                static_cast<std::uint64_t>(view == View::kDrone ? index + 1 : 0));
      for (auto& v : img) v += static_cast<Real>(o.view_noise * noise_rng.normal());
      SampleMeta meta{class_id, view, lat, lon,
                      split_name + "/" + std::to_string(class_id) + "/" + view_name(view) + "_" + std::to_string(index) +
                          ".cten"};
      dst.push_back({meta, Tensor::from_data({c, h, w}, std::move(img))});
    };
    const Image drone = drone_view(latent, c, h, w);
    for (int d = 0; d < o.drones_per_class; ++d) emit(View::kDrone, d, drone, out.drones);
    emit(View::kSatellite, 0, satellite_view(latent, c, h * w), out.satellites);
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_coordinate(const std::string& s, std::size_t line_no) {
  if (s.empty() || s == "nan" || s == "NA") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("metadata.csv line " + std::to_string(line_no) + ": bad coordinate '" + s + "'");
  }
}

}  // namespace

std::vector<int> DatasetSplit::train_classes() const { return classes_of(train); }
std::vector<int> DatasetSplit::query_classes() const { return classes_of(query); }
std::vector<int> DatasetSplit::gallery_classes() const { return classes_of(gallery); }

bool DatasetSplit::has_coordinates() const {
  for (const auto* part : {&train, &query, &gallery}) {
    for (const auto& s : *part) {
      if (!s.meta.has_coordinates()) return false;
    }
  }
  return true;
}

Shape DatasetSplit::image_shape() const {
  for (const auto* part : {&train, &query, &gallery}) {
    if (!part->empty()) return part->front().image.shape();
  }
  throw DataError("empty dataset");
}

void validate(const DatasetSplit& split) {
  if (split.train.empty() || split.query.empty() || split.gallery.empty()) {
    throw DataError("dataset needs non-empty train, query and gallery partitions");
  }
  const Shape shape = split.image_shape();
  if (shape.size() != 3) throw DataError("images must be (C,H,W), got " + shape_str(shape));

  struct ClassInfo {
    bool drone = false, satellite = false;
    double lat = 0, lon = 0;
    bool seen = false;
  };
  std::map<int, ClassInfo> info;
  std::optional<bool> with_gps;
  auto visit = [&](const std::vector<Sample>& samples, const char* part) {
    for (const auto& s : samples) {
      if (s.image.shape() != shape) {
        throw DataError(std::string(part) + " sample " + s.meta.relpath + " has shape " + shape_str(s.image.shape()) +
                        ", expected " + shape_str(shape));
      }
      if (s.meta.class_id < 0) throw DataError("negative class id in " + s.meta.relpath);
      const bool gps = s.meta.has_coordinates();
      if (with_gps && *with_gps != gps) throw DataError("coordinates present for some samples only");
      with_gps = gps;
      auto& ci = info[s.meta.class_id];
      (s.meta.view == View::kDrone ? ci.drone : ci.satellite) = true;
      if (!ci.seen) {
        ci.seen = true;
        ci.lat = s.meta.lat;
        ci.lon = s.meta.lon;
      } else if (gps && (ci.lat != s.meta.lat || ci.lon != s.meta.lon)) {
        throw DataError("class " + std::to_string(s.meta.class_id) + " has inconsistent coordinates");
      }
    }
  };
  visit(split.train, "train");
  visit(split.query, "query");
  visit(split.gallery, "gallery");

  for (const auto& [id, ci] : info) {
    if (!ci.drone || !ci.satellite) {
      throw DataError("class " + std::to_string(id) + " lacks a " + (ci.drone ? "satellite" : "drone") + " view");
    }
  }
  for (const auto& s : split.query) {
    if (s.meta.view != View::kDrone) throw DataError("query sample " + s.meta.relpath + " is not a drone view");
  }
  for (const auto& s : split.gallery) {
    if (s.meta.view != View::kSatellite) throw DataError("gallery sample " + s.meta.relpath + " is not a satellite view");
  }
  const auto train = split.train_classes(), gallery = split.gallery_classes();
  for (int id : split.query_classes()) {
    if (!std::binary_search(gallery.begin(), gallery.end(), id)) {
      throw DataError("query class " + std::to_string(id) + " is absent from the gallery");
    }
    if (std::binary_search(train.begin(), train.end(), id)) {
      throw DataError("class " + std::to_string(id) + " appears in both train and query");
    }
  }
}

Tensor synthetic_satellite_transform(const Tensor& latent) {
  if (latent.rank() != 3) throw ShapeError("latent must be (C,H,W)");
  return Tensor::from_data(latent.shape(),
                           satellite_view(latent.to_vector(), latent.dim(0), latent.dim(1) * latent.dim(2)));
}

Tensor synthetic_drone_transform(const Tensor& latent) {
  if (latent.rank() != 3) throw ShapeError("latent must be (C,H,W)");
  return Tensor::from_data(latent.shape(),
                           drone_view(latent.to_vector(), latent.dim(0), latent.dim(1), latent.dim(2)));
}

DatasetSplit generate_synthetic(const SyntheticOptions& o) {
  if (o.n_classes < 4) throw ConfigError("synthetic dataset needs at least 4 classes");
  if (!(o.grid_spacing_deg > 0)) throw ConfigError("grid spacing must be positive");
  if (o.channels == 0 || o.height == 0 || o.width == 0) throw ConfigError("image dimensions must be positive");
  if (o.drones_per_class < 1) throw ConfigError("need at least one drone view per class");
  if (o.view_noise < 0 || o.field_weight < 0 || o.field_weight > 1) throw ConfigError("bad noise or field weight");

  DatasetSplit split;
  auto train = generate_grid(o, "train", 0, 30.0, 120.0, 1);
  auto test = generate_grid(o, "test", o.n_classes, 30.5, 120.0, 2);
  for (auto* part : {&train.drones, &train.satellites}) {
    for (auto& s : *part) split.train.push_back(std::move(s));
  }
  // Interleave so each class's views sit together, matching the on-disk order.
  std::stable_sort(split.train.begin(), split.train.end(), [](const Sample& a, const Sample& b) {
    return a.meta.class_id < b.meta.class_id;
  });
  for (auto& s : test.drones) {
    s.meta.relpath.replace(0, 4, "query");
    split.query.push_back(std::move(s));
  }
  for (auto& s : test.satellites) {
    s.meta.relpath.replace(0, 4, "gallery");
    split.gallery.push_back(std::move(s));
  }
  return split;
}

DatasetSplit load_dataset(const std::filesystem::path& root) {
  const auto csv_path = root / "metadata.csv";
  std::ifstream in(csv_path);
  if (!in) throw DataError("missing " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty " + csv_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (line != "class_id,view,lat,lon,relpath") {
    throw DataError("metadata.csv header must be class_id,view,lat,lon,relpath");
  }

  DatasetSplit split;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw DataError("metadata.csv line " + std::to_string(line_no) + ": expected 5 fields");
    SampleMeta meta;
    try {
      meta.class_id = std::stoi(f[0]);
    } catch (const std::exception&) {
      throw DataError("metadata.csv line " + std::to_string(line_no) + ": bad class_id '" + f[0] + "'");
    }
    meta.view = parse_view(f[1]);
    meta.lat = parse_coordinate(f[2], line_no);
    meta.lon = parse_coordinate(f[3], line_no);
    meta.relpath = f[4];
    if (!seen.insert(meta.relpath).second) throw DataError("duplicate relpath " + meta.relpath);
    const auto part = meta.relpath.substr(0, meta.relpath.find('/'));
    std::vector<Sample>* dst = part == "train" ? &split.train
                               : part == "query" ? &split.query
                               : part == "gallery" ? &split.gallery
                                                   : nullptr;
    if (!dst) throw DataError("relpath " + meta.relpath + " is outside train/, query/ and gallery/");
    Tensor image = read_cten(root / meta.relpath);
    dst->push_back({std::move(meta), std::move(image)});
  }
  validate(split);
  return split;
}

void save_dataset(DatasetSplit& split, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::ofstream csv(root / "metadata.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write " + (root / "metadata.csv").string());
  csv << "class_id,view,lat,lon,relpath\n";
  csv.precision(17);
  std::map<std::pair<int, View>, int> counters;
  for (auto [name, part] : {std::pair{"train", &split.train}, {"query", &split.query}, {"gallery", &split.gallery}}) {
    for (auto& s : *part) {
      const int n = counters[{s.meta.class_id, s.meta.view}]++;
      s.meta.relpath = std::string(name) + "/" + std::to_string(s.meta.class_id) + "/" + view_name(s.meta.view) + "_" +
                       std::to_string(n) + ".cten";
      std::filesystem::create_directories((root / s.meta.relpath).parent_path());
      write_cten(root / s.meta.relpath, s.image);
      csv << s.meta.class_id << ',' << view_name(s.meta.view) << ',';
      if (s.meta.has_coordinates()) csv << s.meta.lat << ',' << s.meta.lon;
      else csv << ',';
      csv << ',' << s.meta.relpath << '\n';
    }
  }
}

Tensor augment(const Tensor& x, const AugmentDraw& draw) {
  if (x.rank() != 3 || x.dim(1) < 8 || x.dim(2) < 8) {
    throw ContractError("augment needs a (C,H,W) image with H,W >= 8, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto in = x.data();
  std::vector<Real> out(in.size(), 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const long sy = static_cast<long>(y) + draw.dy;
      if (sy < 0 || sy >= static_cast<long>(h)) continue;
      for (std::size_t xo = 0; xo < w; ++xo) {
        const long sx = static_cast<long>(draw.flip ? w - 1 - xo : xo) + draw.dx;
        if (sx < 0 || sx >= static_cast<long>(w)) continue;
        out[(ch * h + y) * w + xo] = in[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

AugmentDraw draw_augment(std::uint64_t seed, long pad) {
  Rng rng(seed, 0xa06);
  AugmentDraw d;
  d.dy = rng.between(-pad, pad);
  d.dx = rng.between(-pad, pad);
  d.flip = rng.coin();
  return d;
}

Tensor augment(const Tensor& x, std::uint64_t seed, long pad) { return augment(x, draw_augment(seed, pad)); }

std::string shift_mode_name(ShiftMode m) { return m == ShiftMode::kBlack ? "black" : "flip"; }

Tensor position_shift(const Tensor& x, std::size_t k, ShiftMode mode) {
  if (x.rank() != 3) throw ShapeError("position_shift expects (C,H,W), got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (k >= w) throw RangeError("shift of " + std::to_string(k) + " columns on width " + std::to_string(w));
  const auto in = x.data();
  std::vector<Real> out(in.size(), 0);
  for (std::size_t row = 0; row < c * h; ++row) {
    const Real* src = in.data() + row * w;
    Real* dst = out.data() + row * w;
    for (std::size_t col = k; col < w; ++col) dst[col] = src[col - k];
    if (mode == ShiftMode::kFlip) {
      for (std::size_t col = 0; col < k; ++col) dst[col] = src[k - 1 - col];
    }
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

}  // namespace ceusp
