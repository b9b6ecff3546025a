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

#include "ceusp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "ceusp/errors.hpp"
#include "ceusp/model.hpp"
#include "ceusp/tensor_io.hpp"

namespace ceusp {
namespace {

constexpr double kUnitTol = 1e-6;

void check_unit(const std::vector<Real>& v, const char* what) {
  double n2 = 0;
  for (Real x : v) n2 += static_cast<double>(x) * static_cast<double>(x);
  if (std::abs(std::sqrt(n2) - 1.0) > kUnitTol) throw ContractError(std::string(what) + " embedding is not unit-norm");
}

bool finite_coords(double lat, double lon) { return std::isfinite(lat) && std::isfinite(lon); }

double mean_of(const std::vector<RankedRetrieval>& rrs, const std::function<double(const RankedRetrieval&)>& f) {
  double total = 0;
  for (const auto& rr : rrs) total += f(rr);
  return total / static_cast<double>(rrs.size());
}

}  // namespace

Ranking rank_gallery(const std::vector<Real>& query, const std::vector<std::vector<Real>>& rows) {
  if (rows.empty()) throw ContractError("retrieval needs a non-empty gallery");
  Ranking r;
  r.scores.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != query.size()) throw ShapeError("gallery row length differs from the query");
    Real s = 0;
    for (std::size_t d = 0; d < query.size(); ++d) s += query[d] * rows[i][d];
    r.scores[i] = s;
  }
  r.order.resize(rows.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  std::vector<Real> sorted;
  sorted.reserve(rows.size());
  for (std::size_t i : r.order) sorted.push_back(r.scores[i]);
  r.scores = std::move(sorted);
  return r;
}

RankedRetrieval retrieve(const std::vector<Real>& query, int query_class, double query_lat, double query_lon,
                         const Gallery& gallery) {
  if (gallery.size() == 0) throw ContractError("retrieval needs a non-empty gallery");
  if (gallery.class_ids.size() != gallery.size() || gallery.lat.size() != gallery.size() ||
      gallery.lon.size() != gallery.size()) {
    throw ContractError("gallery columns differ in length");
  }
  check_unit(query, "query");
  for (const auto& row : gallery.rows) check_unit(row, "gallery");
  auto ranking = rank_gallery(query, gallery.rows);
  RankedRetrieval rr;
  rr.query_class = query_class;
  rr.query_lat = query_lat;
  rr.query_lon = query_lon;
  rr.scores = std::move(ranking.scores);
  for (std::size_t i : ranking.order) {
    rr.ids.push_back(gallery.class_ids[i]);
    rr.lat.push_back(gallery.lat[i]);
    rr.lon.push_back(gallery.lon[i]);
  }
  return rr;
}

double recall_at_k(const RankedRetrieval& rr, std::size_t k) {
  if (k == 0) throw ContractError("recall needs k >= 1");
  if (k > rr.ids.size()) {
    throw RangeError("k=" + std::to_string(k) + " exceeds gallery of " + std::to_string(rr.ids.size()));
  }
  return std::find(rr.ids.begin(), rr.ids.begin() + static_cast<long>(k), rr.query_class) !=
                 rr.ids.begin() + static_cast<long>(k)
             ? 1.0
             : 0.0;
}

double average_precision(const RankedRetrieval& rr) {
  double total = 0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rr.ids.size(); ++r) {
    if (rr.ids[r] == rr.query_class) {
      ++hits;
      total += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) throw ContractError("class " + std::to_string(rr.query_class) + " has no gallery match");
  return total / static_cast<double>(hits);
}

double sdm_at_k(const RankedRetrieval& rr, std::size_t k, double s) {
  if (k == 0) throw ContractError("SDM needs k >= 1");
  if (k > rr.ids.size()) {
    throw RangeError("k=" + std::to_string(k) + " exceeds gallery of " + std::to_string(rr.ids.size()));
  }
  if (!finite_coords(rr.query_lat, rr.query_lon)) throw ContractError("SDM needs query coordinates");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!finite_coords(rr.lat[i], rr.lon[i])) throw ContractError("SDM needs gallery coordinates");
    const double w = static_cast<double>(k - i);
    const double d = std::hypot(rr.lat[i] - rr.query_lat, rr.lon[i] - rr.query_lon);
    num += w * std::exp(-s * d);
    den += w;
  }
  return num / den;
}

double r_at_top1(const std::vector<RankedRetrieval>& rrs) {
  if (rrs.empty()) throw ContractError("no queries");
  return mean_of(rrs, [](const RankedRetrieval& rr) {
    const std::size_t n = rr.ids.size();
    if (n < 100) throw RangeError("R@top1 needs a gallery of at least 100, got " + std::to_string(n));
    return recall_at_k(rr, (n + 99) / 100);
  });
}

MetricsReport summarize(const std::vector<RankedRetrieval>& rrs) {
  if (rrs.empty()) throw ContractError("no queries to summarize");
  MetricsReport m;
  m.n_queries = rrs.size();
  m.recall1 = mean_of(rrs, [](const auto& rr) { return recall_at_k(rr, 1); });
  m.recall5 = mean_of(rrs, [](const auto& rr) { return recall_at_k(rr, 5); });
  m.recall10 = mean_of(rrs, [](const auto& rr) { return recall_at_k(rr, 10); });
  m.ap = mean_of(rrs, [](const auto& rr) { return average_precision(rr); });
  const bool big = std::all_of(rrs.begin(), rrs.end(), [](const auto& rr) { return rr.ids.size() >= 100; });
  if (big) m.r_top1 = r_at_top1(rrs);
  const bool coords = std::all_of(rrs.begin(), rrs.end(), [](const RankedRetrieval& rr) {
    if (!finite_coords(rr.query_lat, rr.query_lon)) return false;
    for (std::size_t i = 0; i < rr.lat.size(); ++i) {
      if (!finite_coords(rr.lat[i], rr.lon[i])) return false;
    }
    return true;
  });
  if (coords) {
    m.sdm1 = mean_of(rrs, [](const auto& rr) { return sdm_at_k(rr, 1); });
    m.sdm3 = mean_of(rrs, [](const auto& rr) { return sdm_at_k(rr, 3); });
    m.sdm5 = mean_of(rrs, [](const auto& rr) { return sdm_at_k(rr, 5); });
  }
  return m;
}

std::size_t eval_threads() {
  if (const char* env = std::getenv("CEUSP_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("CEUSP_THREADS must be a positive integer, got ") + env);
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(eval_threads(), n);
  if (workers <= 1) {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      NoGradGuard no_grad;
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<std::vector<Real>> embed_all(const Model& model, const std::vector<Sample>& samples,
                                         const std::function<Tensor(const Tensor&)>& transform) {
  std::vector<std::vector<Real>> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const Tensor x = transform ? transform(samples[i].image) : samples[i].image;
    out[i] = model.extract_embedding(x).to_vector();
  });
  return out;
}

Gallery build_gallery(const Model& model, const std::vector<Sample>& gallery) {
  Gallery g;
  g.rows = embed_all(model, gallery);
  for (const auto& s : gallery) {
    g.class_ids.push_back(s.meta.class_id);
    g.lat.push_back(s.meta.lat);
    g.lon.push_back(s.meta.lon);
  }
  return g;
}

MetricsReport evaluate_queries(const Model& model, const std::vector<Sample>& queries, const Gallery& gallery,
                               const std::function<Tensor(const Tensor&)>& transform) {
  const auto embs = embed_all(model, queries, transform);
  std::vector<RankedRetrieval> rrs(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) {
    const auto& m = queries[i].meta;
    rrs[i] = retrieve(embs[i], m.class_id, m.lat, m.lon, gallery);
  });
  return summarize(rrs);
}

MetricsReport evaluate_split(const Model& model, const DatasetSplit& split) {
  return evaluate_queries(model, split.query, build_gallery(model, split.gallery));
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  auto put = [&out](const std::optional<double>& v) {
    out << ',';
    if (v) {
      out << std::fixed << std::setprecision(9) << *v;
    } else {
      out << "NA";
    }
  };
  out << "split,mode,pad_k,recall@1,recall@5,recall@10,r@top1,ap,sdm@1,sdm@3,sdm@5\n";
  for (const auto& row : rows) {
    const auto& m = row.report;
    out << row.split << ',' << row.mode << ',' << row.pad_k;
    put(m.recall1);
    put(m.recall5);
    put(m.recall10);
    put(m.r_top1);
    put(m.ap);
    put(m.sdm1);
    put(m.sdm3);
    put(m.sdm5);
    out << '\n';
  }
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_metrics_csv(out, rows);
  if (!out) throw DataError("failed writing " + path.string());
}

std::size_t scaled_shift(std::size_t k, std::size_t width, std::size_t reference_width) {
  if (reference_width == 0) throw ConfigError("reference width must be positive");
  return (2 * k * width + reference_width) / (2 * reference_width);
}

std::vector<SweepCell> robustness_sweep(const Model& model, const DatasetSplit& split, const SweepOptions& options) {
  if (split.query.empty()) throw ContractError("no queries to sweep");
  const std::size_t width = split.query.front().image.dim(2);
  const Gallery gallery = build_gallery(model, split.gallery);
  const MetricsReport base = evaluate_queries(model, split.query, gallery);
  std::vector<SweepCell> cells;
  for (ShiftMode mode : options.modes) {
    std::map<std::size_t, MetricsReport> by_pixels{{0, base}};
    for (std::size_t k : options.ks) {
      SweepCell cell;
      cell.mode = mode;
      cell.k = k;
      cell.pixels = scaled_shift(k, width, options.reference_width);
      auto it = by_pixels.find(cell.pixels);
      if (it == by_pixels.end()) {
        const std::size_t px = cell.pixels;
        auto report = evaluate_queries(model, split.query, gallery,
                                       [px, mode](const Tensor& x) { return position_shift(x, px, mode); });
        it = by_pixels.emplace(px, report).first;
      }
      cell.report = it->second;
      cell.ap_delta = cell.report.ap - base.ap;
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<MetricsRow> sweep_rows(const std::vector<SweepCell>& cells) {
  std::vector<MetricsRow> rows;
  for (const auto& c : cells) rows.push_back({"query", shift_mode_name(c.mode), c.k, c.report});
  return rows;
}

Tensor export_attention(const Model& model, const Tensor& x) {
  NoGradGuard no_grad;
  return model.attention_map(x).detach();
}

void export_attention(const Model& model, const Tensor& x, const std::filesystem::path& path) {
  write_cten(path, export_attention(model, x));
}

}  // namespace ceusp
