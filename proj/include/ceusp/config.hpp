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
#include <string>
#include <vector>

#include "ceusp/dataset.hpp"
#include "ceusp/losses.hpp"
#include "ceusp/model.hpp"
#include "ceusp/sampler.hpp"

namespace ceusp {

/// Where the data comes from: a metadata.csv root, or the synthetic generator.
struct DataConfig {
  std::string root;  // empty selects the synthetic generator
  SyntheticOptions synthetic;
};

struct TrainConfig {
  int epochs = 120;
  double lr_backbone = 0.003;
  double lr_new = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::vector<int> lr_milestones{70, 110};
  double lr_decay = 0.1;
  double margin = 0.3;
  TripletMining mining = TripletMining::kPerAnchor;
  long augment_pad = 2;
  /// Epochs between validation passes that may update the best checkpoint.
  int eval_interval = 10;
  std::uint64_t seed = 0;
  bool desk_scale = false;
  SamplerConfig sampler;
  ModelConfig model;
  DataConfig data;

  static TrainConfig full();
  /// 64 classes, 16x16x3, B=16, 60 epochs, milestones {35,50}, bottleneck 32.
  static TrainConfig desk();

  void validate() const;
  std::size_t batch_classes() const { return sampler.batch_classes; }
};

/// Flat key=value text, one per line, '#' comments. An optional
/// `preset=desk|full` line selects the starting point wherever it appears.
/// Unknown keys and malformed values raise ConfigError.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// Every key in a fixed order with round-trip precision.
std::string config_to_text(const TrainConfig& config);

/// Applies one key=value override on top of `config`.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Materializes the configured dataset.
DatasetSplit load_data(const DataConfig& data);

}  // namespace ceusp
