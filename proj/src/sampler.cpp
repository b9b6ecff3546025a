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

#include "ceusp/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include "ceusp/model.hpp"
#include "ceusp/random.hpp"

namespace ceusp {
namespace {

void check_ratios(const SamplingRatios& r, const char* what) {
  if (r.gds < 0 || r.fss < 0 || r.rs < 0 || std::abs(r.gds + r.fss + r.rs - 1.0) > 1e-9) {
    throw ConfigError(std::string(what) + " ratios must be non-negative and sum to 1");
  }
}

// Full ranking of every other class for one anchor.
std::vector<int> rank_by(int anchor, const std::vector<int>& ids, const std::vector<double>& key) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != anchor) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (key[a] != key[b]) return key[a] < key[b];
    return ids[a] < ids[b];
  });
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ids[i]);
  return out;
}

std::vector<int> geo_ranking(int anchor, const std::vector<ClassLocation>& classes) {
  const ClassLocation* a = nullptr;
  std::vector<int> ids;
  for (const auto& c : classes) {
    if (std::isnan(c.lat) || std::isnan(c.lon)) {
      throw ContractError("class " + std::to_string(c.class_id) + " has no coordinates");
    }
    if (c.class_id == anchor) a = &c;
    ids.push_back(c.class_id);
  }
  if (a == nullptr) throw ContractError("anchor class " + std::to_string(anchor) + " not in the class list");
  std::vector<double> d2;
  for (const auto& c : classes) {
    const double dlat = c.lat - a->lat, dlon = c.lon - a->lon;
    d2.push_back(dlat * dlat + dlon * dlon);
  }
  return rank_by(anchor, ids, d2);
}

std::vector<int> feat_ranking(int anchor, const EmbeddingTable& table) {
  if (table.class_ids.empty()) throw ContractError("embedding table is empty");
  auto it = std::find(table.class_ids.begin(), table.class_ids.end(), anchor);
  if (it == table.class_ids.end()) {
    throw ContractError("anchor class " + std::to_string(anchor) + " not in the embedding table");
  }
  const auto& row = table.rows[static_cast<std::size_t>(it - table.class_ids.begin())];
  std::vector<double> neg_sim;
  for (const auto& other : table.rows) {
    if (other.size() != row.size()) throw ShapeError("embedding table rows differ in length");
    double s = 0;
    for (std::size_t i = 0; i < row.size(); ++i) s += static_cast<double>(row[i]) * static_cast<double>(other[i]);
    neg_sim.push_back(-s);
  }
  return rank_by(anchor, table.class_ids, neg_sim);
}

void take_ranked(const std::vector<int>& ranking, std::size_t count, SlotSource tag, std::set<int>& used,
                 BatchPlan& plan) {
  std::size_t taken = 0;
  for (int id : ranking) {
    if (taken == count) break;
    if (used.insert(id).second) {
      plan.slots.push_back({id, tag});
      ++taken;
    }
  }
  if (taken != count) throw ConfigError("not enough classes to fill the batch");
}

}  // namespace

void SamplerConfig::validate() const {
  if (batch_classes < 2) throw ConfigError("sampler.batch_classes must be at least 2");
  if (init_epoch < 0) throw ConfigError("sampler.init_epoch must be non-negative");
  if (late_phase_epoch < init_epoch) throw ConfigError("sampler.late_phase_epoch must not precede init_epoch");
  if (refresh_interval < 1) throw ConfigError("sampler.refresh_interval must be positive");
  check_ratios(early, "sampler.early");
  check_ratios(late, "sampler.late");
}

SamplingRatios phase_ratios(int epoch, const SamplerConfig& config) {
  if (epoch < 0) throw ContractError("epoch must be non-negative");
  if (config.strategy == SamplingStrategy::kRandom || epoch < config.init_epoch) return {0, 0, 1};
  return epoch < config.late_phase_epoch ? config.early : config.late;
}

SlotQuota slot_quota(const SamplingRatios& ratios, std::size_t batch_classes) {
  check_ratios(ratios, "sampling");
  if (batch_classes < 2) throw ConfigError("batch needs an anchor and at least one negative");
  const double b = static_cast<double>(batch_classes);
  const std::array<double, 3> share{ratios.gds * b, ratios.fss * b, ratios.rs * b};
  std::array<std::size_t, 3> q{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    // Guard against 0.5 * 32 landing a hair below 16.
    q[i] = static_cast<std::size_t>(std::floor(share[i] + 1e-9));
    assigned += q[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    return share[a] - static_cast<double>(q[a]) > share[c] - static_cast<double>(q[c]) + 1e-9;
  });
  for (std::size_t i = 0; assigned < batch_classes; ++i, ++assigned) ++q[order[i % 3]];
  for (std::size_t i : {2, 1, 0}) {
    if (q[i] > 0) {
      --q[i];
      break;
    }
  }
  return {q[0], q[1], q[2]};
}

std::vector<ClassLocation> class_locations(const std::vector<Sample>& samples) {
  std::map<int, ClassLocation> by_class;
  for (const auto& s : samples) {
    by_class.try_emplace(s.meta.class_id, ClassLocation{s.meta.class_id, s.meta.lat, s.meta.lon});
  }
  std::vector<ClassLocation> out;
  for (const auto& [id, loc] : by_class) out.push_back(loc);
  return out;
}

std::vector<int> nearest_geo(int anchor, const std::vector<ClassLocation>& classes, std::size_t k) {
  if (k >= classes.size()) {
    throw RangeError("k=" + std::to_string(k) + " needs more than " + std::to_string(classes.size()) + " classes");
  }
  auto r = geo_ranking(anchor, classes);
  r.resize(k);
  return r;
}

void EmbeddingTable::check_fresh(int epoch, int refresh_interval) const {
  if (epoch < stamp) throw ContractError("embedding table stamped in the future");
  if (epoch - stamp >= refresh_interval) {
    throw StaleTableError("embedding table from epoch " + std::to_string(stamp) + " is stale at epoch " +
                          std::to_string(epoch));
  }
}

std::vector<int> nearest_feat(int anchor, const EmbeddingTable& table, std::size_t k, int epoch,
                              int refresh_interval) {
  if (table.class_ids.empty()) throw ContractError("embedding table is empty");
  table.check_fresh(epoch, refresh_interval);
  if (k >= table.class_ids.size()) {
    throw RangeError("k=" + std::to_string(k) + " needs more than " + std::to_string(table.class_ids.size()) +
                     " classes");
  }
  auto r = feat_ranking(anchor, table);
  r.resize(k);
  return r;
}

bool refresh_due(int epoch, const EmbeddingTable* table, const SamplerConfig& config) {
  if (config.strategy == SamplingStrategy::kRandom || epoch < config.init_epoch) return false;
  return table == nullptr || epoch - table->stamp >= config.refresh_interval;
}

EmbeddingTable refresh_similarity(const Model& model, const std::vector<Sample>& train, int epoch) {
  std::map<int, const Sample*> sat;
  for (const auto& s : train) {
    if (s.meta.view == View::kSatellite) sat.try_emplace(s.meta.class_id, &s);
  }
  NoGradGuard no_grad;
  EmbeddingTable table;
  table.stamp = epoch;
  for (const auto& [id, s] : sat) {
    table.class_ids.push_back(id);
    table.rows.push_back(model.extract_embedding(s->image).to_vector());
  }
  return table;
}

std::string slot_source_name(SlotSource s) {
  switch (s) {
    case SlotSource::kAnchor:
      return "anchor";
    case SlotSource::kGds:
      return "GDS";
    case SlotSource::kFss:
      return "FSS";
    case SlotSource::kRs:
      return "RS";
  }
  return "?";
}

SlotQuota BatchPlan::tag_counts() const {
  SlotQuota q;
  for (const auto& s : slots) {
    if (s.source == SlotSource::kGds) ++q.gds;
    if (s.source == SlotSource::kFss) ++q.fss;
    if (s.source == SlotSource::kRs) ++q.rs;
  }
  return q;
}

std::vector<int> BatchPlan::class_ids() const {
  std::vector<int> out;
  for (const auto& s : slots) out.push_back(s.class_id);
  return out;
}

std::vector<BatchPlan> build_epoch_plan(int epoch, const std::vector<ClassLocation>& classes,
                                        const EmbeddingTable* table, const SamplerConfig& config) {
  config.validate();
  if (config.batch_classes > classes.size()) {
    throw ConfigError("batch of " + std::to_string(config.batch_classes) + " classes exceeds the " +
                      std::to_string(classes.size()) + " training classes");
  }
  const bool have_gps = std::none_of(classes.begin(), classes.end(), [](const ClassLocation& c) {
    return std::isnan(c.lat) || std::isnan(c.lon);
  });
  SlotQuota quota = slot_quota(phase_ratios(epoch, config), config.batch_classes);
  if (!have_gps) {
    quota.fss += quota.gds;
    quota.gds = 0;
  }
  if (quota.fss > 0) {
    if (table == nullptr) throw ContractError("feature-similarity slots need an embedding table");
    table->check_fresh(epoch, config.refresh_interval);
  }

  std::vector<int> ids;
  for (const auto& c : classes) ids.push_back(c.class_id);
  Rng rng(config.seed, static_cast<std::uint64_t>(epoch));
  std::vector<int> anchors = ids;
  rng.shuffle(anchors);

  std::vector<BatchPlan> plans;
  plans.reserve(anchors.size());
  for (int anchor : anchors) {
    BatchPlan plan;
    std::set<int> used{anchor};
    plan.slots.push_back({anchor, SlotSource::kAnchor});
    if (quota.gds > 0) take_ranked(geo_ranking(anchor, classes), quota.gds, SlotSource::kGds, used, plan);
    if (quota.fss > 0) take_ranked(feat_ranking(anchor, *table), quota.fss, SlotSource::kFss, used, plan);
    std::vector<int> rest;
    for (int id : ids) {
      if (!used.count(id)) rest.push_back(id);
    }
    for (std::size_t i = 0; i < quota.rs; ++i) {
      std::swap(rest[i], rest[i + rng.below(rest.size() - i)]);
      plan.slots.push_back({rest[i], SlotSource::kRs});
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

void write_sample_audit(std::ostream& out, int epoch, const std::vector<BatchPlan>& plans, bool header) {
  if (header) out << "epoch,batch,slot,class_id,tag\n";
  for (std::size_t b = 0; b < plans.size(); ++b) {
    for (std::size_t s = 0; s < plans[b].slots.size(); ++s) {
      const auto& slot = plans[b].slots[s];
      out << epoch << ',' << b << ',' << s << ',' << slot.class_id << ',' << slot_source_name(slot.source) << '\n';
    }
  }
}

}  // namespace ceusp
