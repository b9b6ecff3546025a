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

#include "ceusp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ceusp/errors.hpp"

namespace ceusp {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError(key + ": expected " + want + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end || value.empty()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

SamplingRatios parse_ratios(const std::string& key, const std::string& value) {
  const auto v = parse_list<double>(key, value);
  if (v.size() != 3) bad_value(key, value, "three comma-separated ratios gds,fss,rs");
  return {v[0], v[1], v[2]};
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_ratios(const SamplingRatios& r) {
  return fmt_double(r.gds) + "," + fmt_double(r.fss) + "," + fmt_double(r.rs);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
};

#define FIELD_NUM(KEY, MEMBER, TYPE)                                                                 \
  Field {                                                                                            \
    KEY, [](const TrainConfig& c) { return std::to_string(c.MEMBER); },                             \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_number<TYPE>(k, v); } \
  }
#define FIELD_REAL(KEY, MEMBER)                                                                      \
  Field {                                                                                            \
    KEY, [](const TrainConfig& c) { return fmt_double(c.MEMBER); },                                 \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_number<double>(k, v); } \
  }
#define FIELD_BOOL(KEY, MEMBER)                                                                      \
  Field {                                                                                            \
    KEY, [](const TrainConfig& c) { return fmt_bool(c.MEMBER); },                                   \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_bool(k, v); } \
  }
#define FIELD_LIST(KEY, MEMBER, TYPE)                                                                \
  Field {                                                                                            \
    KEY, [](const TrainConfig& c) { return fmt_list(c.MEMBER); },                                   \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_list<TYPE>(k, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      FIELD_BOOL("desk_scale", desk_scale),
      FIELD_NUM("train.seed", seed, std::uint64_t),
      FIELD_NUM("train.epochs", epochs, int),
      FIELD_REAL("train.lr_backbone", lr_backbone),
      FIELD_REAL("train.lr_new", lr_new),
      FIELD_REAL("train.momentum", momentum),
      FIELD_REAL("train.weight_decay", weight_decay),
      FIELD_LIST("train.lr_milestones", lr_milestones, int),
      FIELD_REAL("train.lr_decay", lr_decay),
      FIELD_REAL("train.margin", margin),
      Field{"train.triplet_mining",
            [](const TrainConfig& c) {
              return std::string(c.mining == TripletMining::kPerAnchor ? "per_anchor" : "batch_hardest");
            },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              if (v == "per_anchor") {
                c.mining = TripletMining::kPerAnchor;
              } else if (v == "batch_hardest") {
                c.mining = TripletMining::kBatchHardest;
              } else {
                bad_value(k, v, "per_anchor or batch_hardest");
              }
            }},
      FIELD_NUM("train.augment_pad", augment_pad, long),
      FIELD_NUM("train.eval_interval", eval_interval, int),
      FIELD_NUM("sampler.batch_classes", sampler.batch_classes, std::size_t),
      FIELD_NUM("sampler.init_epoch", sampler.init_epoch, int),
      FIELD_NUM("sampler.late_phase_epoch", sampler.late_phase_epoch, int),
      FIELD_NUM("sampler.refresh_interval", sampler.refresh_interval, int),
      Field{"sampler.early_ratio", [](const TrainConfig& c) { return fmt_ratios(c.sampler.early); },
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.sampler.early = parse_ratios(k, v); }},
      Field{"sampler.late_ratio", [](const TrainConfig& c) { return fmt_ratios(c.sampler.late); },
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.sampler.late = parse_ratios(k, v); }},
      Field{"sampler.strategy",
            [](const TrainConfig& c) {
              return std::string(c.sampler.strategy == SamplingStrategy::kDynamic ? "dynamic" : "random");
            },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              if (v == "dynamic") {
                c.sampler.strategy = SamplingStrategy::kDynamic;
              } else if (v == "random") {
                c.sampler.strategy = SamplingStrategy::kRandom;
              } else {
                bad_value(k, v, "dynamic or random");
              }
            }},
      FIELD_NUM("model.in_channels", model.in_channels, std::size_t),
      FIELD_NUM("model.in_height", model.in_height, std::size_t),
      FIELD_NUM("model.in_width", model.in_width, std::size_t),
      FIELD_LIST("model.widths", model.widths, std::size_t),
      FIELD_LIST("model.strides", model.strides, std::size_t),
      FIELD_NUM("model.norm_groups", model.norm_groups, std::size_t),
      FIELD_NUM("model.n_streams", model.n_streams, std::size_t),
      FIELD_NUM("model.bottleneck", model.bottleneck, std::size_t),
      FIELD_NUM("model.n_classes", model.n_classes, std::size_t),
      FIELD_NUM("model.caci_reduction", model.caci_reduction, std::size_t),
      FIELD_NUM("model.caci_kernel", model.caci_kernel, std::size_t),
      FIELD_BOOL("model.caci_weight_sharing", model.caci_weight_sharing),
      Field{"data.root", [](const TrainConfig& c) { return c.data.root; },
            [](TrainConfig& c, const std::string&, const std::string& v) { c.data.root = v; }},
      FIELD_NUM("data.n_classes", data.synthetic.n_classes, int),
      FIELD_REAL("data.grid_spacing_deg", data.synthetic.grid_spacing_deg),
      FIELD_NUM("data.channels", data.synthetic.channels, std::size_t),
      FIELD_NUM("data.height", data.synthetic.height, std::size_t),
      FIELD_NUM("data.width", data.synthetic.width, std::size_t),
      FIELD_REAL("data.view_noise", data.synthetic.view_noise),
      FIELD_NUM("data.seed", data.synthetic.seed, std::uint64_t),
      FIELD_NUM("data.drones_per_class", data.synthetic.drones_per_class, int),
      FIELD_REAL("data.field_weight", data.synthetic.field_weight),
  };
  return table;
}

#undef FIELD_NUM
#undef FIELD_REAL
#undef FIELD_BOOL
#undef FIELD_LIST

}  // namespace

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.sampler.batch_classes = 32;
  c.sampler.init_epoch = 20;
  c.sampler.late_phase_epoch = 70;
  c.sampler.refresh_interval = 6;
  c.model.in_height = c.model.in_width = 256;
  c.model.widths = {32, 64, 128, 256};
  c.model.strides = {2, 2, 2, 2};
  c.model.bottleneck = 512;
  c.model.n_classes = 2256;
  c.data.root = "data/denseuav";
  c.data.synthetic.n_classes = 2256;
  c.data.synthetic.height = c.data.synthetic.width = 256;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.desk_scale = true;
  c.epochs = 60;
  c.lr_milestones = {35, 50};
  // The encoder trains from scratch, so both groups run at ten times the fine-tuning rates.
  c.lr_backbone = 0.03;
  c.lr_new = 0.1;
  c.eval_interval = 5;
  c.sampler.batch_classes = 16;
  // Epoch counts of the sampler schedule halve with the epoch budget.
  c.sampler.init_epoch = 10;
  c.sampler.late_phase_epoch = 35;
  c.sampler.refresh_interval = 3;
  c.model = ModelConfig{};
  c.model.n_classes = 64;
  c.model.bottleneck = 32;
  c.data.root.clear();
  c.data.synthetic = SyntheticOptions{};
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be positive");
  if (lr_backbone < 0 || lr_new < 0) throw ConfigError("learning rates must be non-negative");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("train.lr_decay must lie in (0, 1]");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    if (lr_milestones[i] <= 0 || lr_milestones[i] >= epochs) {
      throw ConfigError("train.lr_milestones must lie inside (0, epochs)");
    }
    if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1]) {
      throw ConfigError("train.lr_milestones must be strictly increasing");
    }
  }
  if (margin < 0) throw ConfigError("train.margin must be non-negative");
  if (augment_pad < 0) throw ConfigError("train.augment_pad must be non-negative");
  if (eval_interval < 1) throw ConfigError("train.eval_interval must be positive");
  sampler.validate();
  model.validate();
  if (data.root.empty()) {
    const auto& s = data.synthetic;
    if (model.in_channels != s.channels || model.in_height != s.height || model.in_width != s.width) {
      throw ConfigError("model input shape does not match data shape");
    }
    if (model.n_classes != static_cast<std::size_t>(s.n_classes)) {
      throw ConfigError("model.n_classes must equal the number of training classes");
    }
  }
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string preset;
  std::istringstream in(text);
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value != "desk" && value != "full") bad_value(key, value, "desk or full");
      preset = value;
    } else {
      entries.emplace_back(std::move(key), std::move(value));
    }
  }
  TrainConfig config = preset == "full" ? TrainConfig::full() : TrainConfig::desk();
  for (const auto& [k, v] : entries) set_config_value(config, k, v);
  config.validate();
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(config) + "\n";
  return out;
}

DatasetSplit load_data(const DataConfig& data) {
  if (data.root.empty()) return generate_synthetic(data.synthetic);
  return load_dataset(data.root);
}

}  // namespace ceusp
