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
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ceusp/config.hpp"
#include "ceusp/eval.hpp"
#include "ceusp/losses.hpp"
#include "ceusp/model.hpp"
#include "ceusp/sampler.hpp"

namespace ceusp {

/// Group rate at `epoch`, decayed once per milestone already reached.
double learning_rate(const TrainConfig& config, ParamGroup group, int epoch);

/// SGD with momentum and coupled L2 weight decay:
///   g = grad + wd * p;  v = momentum * v + g;  p -= lr * v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<NamedParam>& params, double lr_backbone, double lr_head);

  std::map<std::string, std::vector<Real>>& velocities() { return velocities_; }
  const std::map<std::string, std::vector<Real>>& velocities() const { return velocities_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<Real>> velocities_;
};

struct RunState {
  int epoch = 0;  // next epoch to run
  std::uint64_t step = 0;
  std::optional<double> best_metric;
  int best_epoch = -1;

  friend bool operator==(const RunState&, const RunState&) = default;
};

/// Everything needed to resume or evaluate a run.
struct Checkpoint {
  TrainConfig config;
  RunState state;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> velocities;
  std::optional<EmbeddingTable> table;
};

inline constexpr int kCheckpointVersion = 1;

/// Writes dir/manifest.txt plus one CTEN file per tensor.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
/// DataError on unreadable files, VersionError on an unknown manifest version.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

class Trainer {
 public:
  Trainer(TrainConfig config, DatasetSplit split);
  /// Restores model, optimizer, run state and similarity table.
  Trainer(const Checkpoint& checkpoint, DatasetSplit split);

  const TrainConfig& config() const { return config_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const DatasetSplit& split() const { return split_; }
  const RunState& state() const { return state_; }
  const EmbeddingTable* table() const { return table_ ? &*table_ : nullptr; }
  bool finished() const { return state_.epoch >= config_.epochs; }

  /// Where a diagnostic checkpoint goes if a step produces NaN/Inf.
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  /// Plan for the next epoch, refreshing the similarity table when due.
  std::vector<BatchPlan> plan_epoch();

  /// One optimizer step on `plan`; returns the losses before the update.
  LossReport train_step(const BatchPlan& plan, std::size_t batch_index);

  /// Runs the next epoch; appends one log row per step when `log` is set.
  std::vector<LossReport> train_epoch(std::ostream* log = nullptr);

  MetricsReport evaluate() const;

  /// SDM@1 when coordinates exist, else Recall@1.
  static double validation_metric(const MetricsReport& report);
  void note_validation(double metric);

  Checkpoint checkpoint() const;

 private:
  TrainConfig config_;
  DatasetSplit split_;
  Model model_;
  Sgd sgd_;
  RunState state_;
  std::optional<EmbeddingTable> table_;
  std::vector<ClassLocation> locations_;
  std::map<int, std::size_t> label_of_;
  std::map<int, std::vector<std::size_t>> drones_;
  std::map<int, std::vector<std::size_t>> satellites_;
  std::filesystem::path dump_dir_;
};

void write_log_header(std::ostream& out);

struct EpochSummary {
  int epoch = 0;
  LossReport mean;
  std::optional<MetricsReport> validation;
};

struct TrainOutcome {
  MetricsReport final_report;
  RunState state;
};

/// Trains to completion under `out`: train_log.csv, checkpoint/ (final),
/// best/ (best validation SDM@1), metrics.csv and config.txt.
TrainOutcome run_training(Trainer& trainer, const std::filesystem::path& out,
                          const std::function<void(const EpochSummary&)>& on_epoch = {});

/// Loads a checkpoint and evaluates it on `split`; VersionError when the
/// checkpoint's model settings differ from `config`.
MetricsReport evaluate_checkpoint(const TrainConfig& config, const std::filesystem::path& checkpoint,
                                  const DatasetSplit& split);

}  // namespace ceusp
