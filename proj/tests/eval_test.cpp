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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <sstream>

#include "ceusp/model.hpp"
#include "ceusp/errors.hpp"
#include "ceusp/tensor_io.hpp"
#include "oracles.hpp"

namespace ceusp {
namespace {

std::vector<Real> unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<Real> v(dim);
  double n2 = 0;
  for (auto& x : v) {
    x = nd(rng);
    n2 += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n2);
  return v;
}

// Ranking with the given class ids and distances; scores descend by position.
RankedRetrieval fixture(int query_class, const std::vector<int>& ids, const std::vector<double>& dist = {}) {
  RankedRetrieval rr;
  rr.query_class = query_class;
  rr.query_lat = 30.0;
  rr.query_lon = 120.0;
  rr.ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    rr.scores.push_back(1.0 - static_cast<double>(i) / static_cast<double>(ids.size()));
    rr.lat.push_back(30.0 + (dist.empty() ? 0.0 : dist[i]));
    rr.lon.push_back(120.0);
  }
  return rr;
}

RankedRetrieval random_fixture(std::mt19937_64& rng, std::size_t n, int n_classes) {
  std::uniform_int_distribution<int> cls(0, n_classes - 1);
  std::uniform_real_distribution<double> d(0, 2e-3);
  std::vector<int> ids(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = cls(rng);
    dist[i] = d(rng);
  }
  ids[rng() % n] = 0;  // guarantee one relevant item
  return fixture(0, ids, dist);
}

std::vector<bool> relevance(const RankedRetrieval& rr) {
  std::vector<bool> out;
  for (int id : rr.ids) out.push_back(id == rr.query_class);
  return out;
}

std::vector<double> distances(const RankedRetrieval& rr) {
  std::vector<double> out;
  for (std::size_t i = 0; i < rr.ids.size(); ++i) out.push_back(std::hypot(rr.lat[i] - rr.query_lat, rr.lon[i] - rr.query_lon));
  return out;
}

TEST(Retrieve, SelfRanksFirst) {
  std::mt19937_64 rng(1);
  Gallery g;
  for (int i = 0; i < 10; ++i) {
    g.rows.push_back(unit(8, rng));
    g.class_ids.push_back(i);
    g.lat.push_back(0);
    g.lon.push_back(0);
  }
  auto rr = retrieve(g.rows[6], 6, 0, 0, g);
  EXPECT_EQ(rr.ids[0], 6);
  EXPECT_NEAR(rr.scores[0], 1.0, 1e-12);
  for (std::size_t i = 1; i < rr.scores.size(); ++i) EXPECT_LE(rr.scores[i], rr.scores[i - 1]);
}

TEST(Retrieve, OrthogonalKeepsIndexOrder) {
  Gallery g;
  for (int i = 0; i < 4; ++i) {
    std::vector<Real> row(5, 0);
    row[static_cast<std::size_t>(i)] = 1;
    g.rows.push_back(row);
    g.class_ids.push_back(10 + i);
    g.lat.push_back(0);
    g.lon.push_back(0);
  }
  auto rr = retrieve({0, 0, 0, 0, 1}, 10, 0, 0, g);
  EXPECT_EQ(rr.ids, (std::vector<int>{10, 11, 12, 13}));
  for (Real s : rr.scores) EXPECT_EQ(s, 0);
}

TEST(Retrieve, Contracts) {
  EXPECT_THROW(retrieve({1, 0}, 0, 0, 0, Gallery{}), ContractError);
  Gallery g{{{1, 0}}, {0}, {0}, {0}};
  EXPECT_THROW(retrieve({2, 0}, 0, 0, 0, g), ContractError);
}

TEST(Retrieve, CosineOrderEqualsEuclideanOrder) {
  std::mt19937_64 rng(10);
  for (int set = 0; set < 1000; ++set) {
    const std::size_t n = 2 + rng() % 40, dim = 2 + rng() % 30;
    std::vector<std::vector<Real>> rows;
    std::vector<oracle::Vec> ov;
    for (std::size_t i = 0; i < n; ++i) {
      rows.push_back(unit(dim, rng));
      ov.emplace_back(rows.back().begin(), rows.back().end());
    }
    const auto q = unit(dim, rng);
    const auto order = rank_gallery(q, rows).order;
    ASSERT_EQ(order, oracle::euclidean_order(oracle::Vec(q.begin(), q.end()), ov)) << "set " << set;
  }
}

TEST(Recall, HandExamples) {
  auto rr = fixture(3, {3, 1, 2, 4, 5, 6, 7, 8, 9, 0});
  EXPECT_EQ(recall_at_k(rr, 1), 1.0);
  auto late = fixture(3, {0, 1, 2, 4, 5, 3, 7, 8, 9, 10});
  EXPECT_EQ(recall_at_k(late, 5), 0.0);
  EXPECT_EQ(recall_at_k(late, 10), 1.0);
  EXPECT_THROW(recall_at_k(late, 11), RangeError);
  EXPECT_THROW(recall_at_k(late, 0), ContractError);
}

TEST(Recall, MatchesBruteForce) {
  std::mt19937_64 rng(2);
  for (int f = 0; f < 100; ++f) {
    std::vector<RankedRetrieval> rrs;
    for (int q = 0; q < 20; ++q) rrs.push_back(random_fixture(rng, 30, 8));
    for (std::size_t k : {1, 5, 10, 30}) {
      double mine = 0, brute = 0;
      for (const auto& rr : rrs) {
        mine += recall_at_k(rr, k);
        brute += oracle::recall_at_k(relevance(rr), k) ? 1.0 : 0.0;
      }
      EXPECT_NEAR(mine / 20, brute / 20, 1e-12);
    }
  }
}

TEST(AveragePrecision, HandExamples) {
  EXPECT_EQ(average_precision(fixture(1, {1, 2, 3})), 1.0);
  const double ap = average_precision(fixture(1, {1, 2, 1, 3}));
  EXPECT_NEAR(ap, (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(ap, 0.833333, 5e-7);
  EXPECT_THROW(average_precision(fixture(9, {1, 2, 3})), ContractError);
}

TEST(AveragePrecision, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int f = 0; f < 100; ++f) {
    auto rr = random_fixture(rng, 5 + rng() % 60, 5);
    EXPECT_NEAR(average_precision(rr), oracle::average_precision(relevance(rr)), 1e-12);
  }
}

TEST(Sdm, HandExamples) {
  for (std::size_t k = 1; k <= 5; ++k) EXPECT_EQ(sdm_at_k(fixture(0, {1, 2, 3, 4, 5}), k), 1.0);
  const double one = sdm_at_k(fixture(0, {1, 2}, {0.0002, 0}), 1);
  EXPECT_NEAR(one, std::exp(-1.0), 1e-12);
  EXPECT_NEAR(one, 0.367879, 5e-7);
  const double three = sdm_at_k(fixture(0, {1, 2, 3}, {0, 0.0002, 0.001}), 3);
  EXPECT_NEAR(three, (3 + 2 * std::exp(-1.0) + std::exp(-5.0)) / 6, 1e-12);
  EXPECT_NEAR(three, 0.623749, 5e-7);
}

TEST(Sdm, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  for (int f = 0; f < 100; ++f) {
    auto rr = random_fixture(rng, 10, 5);
    for (std::size_t k : {1, 3, 5, 10}) {
      EXPECT_NEAR(sdm_at_k(rr, k), oracle::sdm_at_k(distances(rr), k, kSdmScale), 1e-12);
    }
  }
}

TEST(Sdm, StrictlyDecreasingInEachDistance) {
  std::vector<double> d{0.0001, 0.0003, 0.0002};
  const double base = sdm_at_k(fixture(0, {1, 2, 3}, d), 3);
  EXPECT_GT(base, 0);
  EXPECT_LT(base, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    auto more = d;
    more[i] += 1e-5;
    EXPECT_LT(sdm_at_k(fixture(0, {1, 2, 3}, more), 3), base);
  }
}

TEST(Sdm, MissingCoordinates) {
  auto rr = fixture(0, {1, 2});
  rr.lat[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sdm_at_k(rr, 1), ContractError);
  auto rq = fixture(0, {1, 2});
  rq.query_lon = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sdm_at_k(rq, 1), ContractError);
}

TEST(RTop1, HandExamples) {
  std::vector<int> ids(200);
  for (int i = 0; i < 200; ++i) ids[static_cast<std::size_t>(i)] = i + 1;
  auto at2 = ids;
  at2[1] = 0;
  auto at3 = ids;
  at3[2] = 0;
  EXPECT_EQ(r_at_top1({fixture(0, at2)}), 1.0);
  EXPECT_EQ(r_at_top1({fixture(0, at3)}), 0.0);
  EXPECT_THROW(r_at_top1({fixture(0, {0, 1, 2})}), RangeError);
}

TEST(RTop1, AgreesWithRecallAtCeilOnePercent) {
  std::mt19937_64 rng(5);
  for (int f = 0; f < 50; ++f) {
    const std::size_t n = 100 + rng() % 250;
    std::vector<RankedRetrieval> rrs;
    double recall = 0;
    for (int q = 0; q < 10; ++q) {
      rrs.push_back(random_fixture(rng, n, 40));
      recall += recall_at_k(rrs.back(), static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(n))));
    }
    EXPECT_NEAR(r_at_top1(rrs), recall / 10, 1e-12);
  }
}

TEST(Summarize, FieldsAndAvailability) {
  std::mt19937_64 rng(6);
  std::vector<RankedRetrieval> rrs;
  for (int q = 0; q < 30; ++q) rrs.push_back(random_fixture(rng, 50, 6));
  auto m = summarize(rrs);
  EXPECT_EQ(m.n_queries, 30u);
  EXPECT_LE(m.recall1, m.recall5);
  EXPECT_LE(m.recall5, m.recall10);
  EXPECT_FALSE(m.r_top1.has_value());
  ASSERT_TRUE(m.sdm1.has_value());
  for (double v : {m.recall1, m.recall10, m.ap, *m.sdm1, *m.sdm3, *m.sdm5}) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
  rrs[4].lat[7] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(summarize(rrs).sdm1.has_value());
  EXPECT_THROW(summarize({}), ContractError);
}

TEST(MetricsCsv, Layout) {
  MetricsReport m;
  m.recall1 = 0.5;
  m.recall5 = 0.75;
  m.recall10 = 1;
  m.ap = 1.0 / 3.0;
  m.sdm1 = 0.25;
  m.sdm3 = 0.5;
  m.sdm5 = 0.125;
  std::ostringstream out;
  write_metrics_csv(out, {{"query", "flip", 30, m}});
  EXPECT_EQ(out.str(),
            "split,mode,pad_k,recall@1,recall@5,recall@10,r@top1,ap,sdm@1,sdm@3,sdm@5\n"
            "query,flip,30,0.500000000,0.750000000,1.000000000,NA,0.333333333,0.250000000,0.500000000,"
            "0.125000000\n");
}

TEST(Threads, EnvironmentCap) {
  ::setenv("CEUSP_THREADS", "3", 1);
  EXPECT_EQ(eval_threads(), 3u);
  std::vector<int> hits(100, 0);
  parallel_for(100, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 7) throw RangeError("x"); }), RangeError);
  ::setenv("CEUSP_THREADS", "zero", 1);
  EXPECT_THROW(eval_threads(), ConfigError);
  ::unsetenv("CEUSP_THREADS");
  EXPECT_GE(eval_threads(), 1u);
}

ModelConfig small_config() {
  ModelConfig c;
  c.widths = {8, 8};
  c.strides = {2, 2};
  c.caci_reduction = 2;
  c.caci_kernel = 3;
  c.bottleneck = 8;
  return c;
}

DatasetSplit small_split() {
  SyntheticOptions o;
  o.seed = 3;
  return generate_synthetic(o);
}

TEST(EvaluateModel, SelfRetrievalIsPerfect) {
  Model model(small_config(), 1);
  auto split = small_split();
  split.query.clear();
  for (const auto& g : split.gallery) {
    Sample q = g;
    q.meta.view = View::kDrone;
    split.query.push_back(q);
  }
  auto m = evaluate_split(model, split);
  EXPECT_EQ(m.recall1, 1.0);
  EXPECT_EQ(*m.sdm1, 1.0);
  EXPECT_EQ(m.n_queries, 64u);
}

TEST(EvaluateModel, ThreadCountDoesNotChangeResults) {
  Model model(small_config(), 2);
  auto split = small_split();
  ::setenv("CEUSP_THREADS", "1", 1);
  auto one = evaluate_split(model, split);
  ::setenv("CEUSP_THREADS", "4", 1);
  auto four = evaluate_split(model, split);
  ::unsetenv("CEUSP_THREADS");
  EXPECT_EQ(one, four);
}

TEST(Sweep, ScaledShift) {
  std::vector<std::size_t> got;
  for (std::size_t k : {0, 10, 20, 30, 40, 50, 60}) got.push_back(scaled_shift(k, 16, 256));
  EXPECT_EQ(got, (std::vector<std::size_t>{0, 1, 1, 2, 3, 3, 4}));
  EXPECT_EQ(scaled_shift(60, 256, 256), 60u);
}

TEST(Sweep, ZeroShiftMatchesUnshifted) {
  Model model(small_config(), 4);
  auto split = small_split();
  auto base = evaluate_split(model, split);
  auto cells = robustness_sweep(model, split);
  ASSERT_EQ(cells.size(), 14u);
  for (const auto& c : cells) {
    if (c.k == 0) {
      EXPECT_EQ(c.report, base);
      EXPECT_EQ(c.ap_delta, 0.0);
    }
    EXPECT_DOUBLE_EQ(c.ap_delta, c.report.ap - base.ap);
  }
  EXPECT_EQ(sweep_rows(cells)[7].mode, "flip");
}

TEST(Attention, ShapeSignAndZeroInput) {
  Model model(small_config(), 5);
  std::mt19937_64 rng(5);
  auto split = small_split();
  auto a = export_attention(model, split.query[0].image);
  EXPECT_EQ(a.shape(), (Shape{4, 4}));
  for (Real v : a.to_vector()) EXPECT_GE(v, 0);
  auto z = export_attention(model, Tensor::zeros({3, 16, 16}));
  for (Real v : z.to_vector()) EXPECT_EQ(v, 0);
  const auto path = std::filesystem::temp_directory_path() / "ceusp_attn_test.cten";
  export_attention(model, split.query[0].image, path);
  EXPECT_EQ(read_cten(path).to_vector(), a.to_vector());
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace ceusp
