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

#include "ceusp/train.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ceusp/errors.hpp"
#include "ceusp/ops.hpp"
#include "ceusp/random.hpp"
#include "ceusp/tensor_io.hpp"

namespace ceusp {
namespace {

namespace fs = std::filesystem;

constexpr char kManifestMagic[] = "ceusp-checkpoint";

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_field(const std::string& what, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end || value.empty()) throw DataError("manifest: bad " + what + " '" + value + "'");
  return out;
}

void log_row(std::ostream& out, int epoch, std::uint64_t step, const LossReport& r) {
  out << epoch << ',' << step << ',' << fmt_double(r.l_rpt) << ',' << fmt_double(r.l_mtc) << ','
      << fmt_double(r.l_kl) << ',' << fmt_double(r.total) << '\n';
}

std::string model_section(const TrainConfig& c) {
  std::istringstream in(config_to_text(c));
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("model.", 0) == 0) out += line + "\n";
  }
  return out;
}

// Stream ids keep the per-step draws independent of everything but (seed, epoch, batch).
constexpr std::uint64_t kStepStream = 0x5354455000000000ULL;

}  // namespace

double learning_rate(const TrainConfig& config, ParamGroup group, int epoch) {
  double lr = group == ParamGroup::kBackbone ? config.lr_backbone : config.lr_new;
  for (int m : config.lr_milestones) {
    if (epoch >= m) lr *= config.lr_decay;
  }
  return lr;
}

void Sgd::step(const std::vector<NamedParam>& params, double lr_backbone, double lr_head) {
  for (const auto& p : params) {
    auto& v = velocities_[p.name];
    Tensor t = p.tensor;
    const auto g = t.grad();
    auto data = t.mutable_data();
    if (v.empty()) v.assign(data.size(), 0);
    const Real lr = static_cast<Real>(p.group == ParamGroup::kBackbone ? lr_backbone : lr_head);
    const Real mu = static_cast<Real>(momentum_), wd = static_cast<Real>(weight_decay_);
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * data[i]);
      data[i] -= lr * v[i];
    }
  }
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  fs::create_directories(dir / "params");
  fs::create_directories(dir / "velocity");
  std::ostringstream m;
  m << kManifestMagic << ' ' << kCheckpointVersion << '\n';
  m << "[config]\n" << config_to_text(ck.config);
  m << "[state]\n";
  m << "epoch=" << ck.state.epoch << '\n' << "step=" << ck.state.step << '\n';
  m << "best_metric=" << (ck.state.best_metric ? fmt_double(*ck.state.best_metric) : "NA") << '\n';
  m << "best_epoch=" << ck.state.best_epoch << '\n';
  if (ck.table) {
    m << "[table]\n" << "stamp=" << ck.table->stamp << '\n' << "class_ids=";
    for (std::size_t i = 0; i < ck.table->class_ids.size(); ++i) m << (i ? "," : "") << ck.table->class_ids[i];
    m << "\nfile=table.cten\n";
    const std::size_t n = ck.table->rows.size(), d = n ? ck.table->rows[0].size() : 0;
    std::vector<Real> flat;
    for (const auto& row : ck.table->rows) flat.insert(flat.end(), row.begin(), row.end());
    write_cten(dir / "table.cten", Tensor::from_data({n, d}, flat));
  }
  m << "[tensors]\n";
  for (const auto& [name, t] : ck.params) {
    const std::string rel = "params/" + name + ".cten";
    write_cten(dir / rel, t);
    m << "param " << name << ' ' << rel << '\n';
  }
  for (const auto& [name, t] : ck.velocities) {
    const std::string rel = "velocity/" + name + ".cten";
    write_cten(dir / rel, t);
    m << "velocity " << name << ' ' << rel << '\n';
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  out << m.str();
  if (!out) throw DataError("cannot write " + (dir / "manifest.txt").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw DataError("cannot read checkpoint manifest " + (dir / "manifest.txt").string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kManifestMagic) throw DataError("not a checkpoint manifest: " + dir.string());
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  std::string config_text, section, line;
  std::map<std::string, std::string> state, table;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line;
      continue;
    }
    if (section == "[config]") {
      config_text += line + "\n";
    } else if (section == "[state]" || section == "[table]") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("manifest: malformed line '" + line + "'");
      (section == "[state]" ? state : table)[line.substr(0, eq)] = line.substr(eq + 1);
    } else if (section == "[tensors]") {
      std::istringstream ls(line);
      std::string kind, name, rel;
      ls >> kind >> name >> rel;
      if (kind == "param") {
        ck.params[name] = read_cten(dir / rel);
      } else if (kind == "velocity") {
        ck.velocities[name] = read_cten(dir / rel);
      } else {
        throw DataError("manifest: unknown tensor kind '" + kind + "'");
      }
    } else {
      throw DataError("manifest: content outside a section");
    }
  }
  try {
    ck.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw VersionError(std::string("checkpoint config rejected: ") + e.what());
  }
  ck.state.epoch = parse_field<int>("epoch", state["epoch"]);
  ck.state.step = parse_field<std::uint64_t>("step", state["step"]);
  if (state["best_metric"] != "NA") ck.state.best_metric = parse_field<double>("best_metric", state["best_metric"]);
  ck.state.best_epoch = parse_field<int>("best_epoch", state["best_epoch"]);
  if (!table.empty()) {
    EmbeddingTable t;
    t.stamp = parse_field<int>("table stamp", table["stamp"]);
    std::stringstream ids(table["class_ids"]);
    std::string id;
    while (std::getline(ids, id, ',')) t.class_ids.push_back(parse_field<int>("table class id", id));
    const Tensor rows = read_cten(dir / table["file"]);
    if (rows.rank() != 2 || rows.dim(0) != t.class_ids.size()) throw DataError("table rows do not match class ids");
    const auto flat = rows.to_vector();
    for (std::size_t i = 0; i < rows.dim(0); ++i) {
      t.rows.emplace_back(flat.begin() + static_cast<long>(i * rows.dim(1)),
                          flat.begin() + static_cast<long>((i + 1) * rows.dim(1)));
    }
    ck.table = std::move(t);
  }
  return ck;
}

Trainer::Trainer(TrainConfig config, DatasetSplit split)
    : config_(std::move(config)),
      split_(std::move(split)),
      model_((config_.validate(), config_.model), config_.seed),
      sgd_(config_.momentum, config_.weight_decay) {
  config_.sampler.seed = config_.seed;
  if (split_.image_shape() != Shape{config_.model.in_channels, config_.model.in_height, config_.model.in_width}) {
    throw ConfigError("data images " + shape_str(split_.image_shape()) + " do not match the model input");
  }
  const auto classes = split_.train_classes();
  if (classes.size() != config_.model.n_classes) {
    throw ConfigError("model.n_classes=" + std::to_string(config_.model.n_classes) + " but the data has " +
                      std::to_string(classes.size()) + " training classes");
  }
  for (std::size_t i = 0; i < classes.size(); ++i) label_of_[classes[i]] = i;
  for (std::size_t i = 0; i < split_.train.size(); ++i) {
    const auto& m = split_.train[i].meta;
    (m.view == View::kDrone ? drones_ : satellites_)[m.class_id].push_back(i);
  }
  locations_ = class_locations(split_.train);
}

Trainer::Trainer(const Checkpoint& ck, DatasetSplit split) : Trainer(ck.config, std::move(split)) {
  model_.load_state(ck.params);
  for (const auto& [name, t] : ck.velocities) sgd_.velocities()[name] = t.to_vector();
  state_ = ck.state;
  table_ = ck.table;
}

std::vector<BatchPlan> Trainer::plan_epoch() {
  const int epoch = state_.epoch;
  if (refresh_due(epoch, table(), config_.sampler)) table_ = refresh_similarity(model_, split_.train, epoch);
  return build_epoch_plan(epoch, locations_, table(), config_.sampler);
}

LossReport Trainer::train_step(const BatchPlan& plan, std::size_t batch_index) {
  const int epoch = state_.epoch;
  Rng rng(config_.seed, kStepStream ^ (static_cast<std::uint64_t>(epoch) << 24) ^ batch_index);
  LossTerms terms;
  try {
    std::vector<Tensor> ce, metric, kl;
    std::vector<int> labels;
    for (const auto& slot : plan.slots) {
      const auto& ds = drones_.at(slot.class_id);
      const auto& ss = satellites_.at(slot.class_id);
      const auto& drone = split_.train[ds[rng.below(ds.size())]];
      const auto& sat = split_.train[ss[rng.below(ss.size())]];
      const Tensor xd = augment(drone.image, rng.next(), config_.augment_pad);
      const Tensor xs = augment(sat.image, rng.next(), config_.augment_pad);
      const auto od = model_.forward(xd);
      const auto os = model_.forward(xs);
      const std::size_t label = label_of_.at(slot.class_id);
      ce.push_back(cross_entropy(od.head.logits, label));
      ce.push_back(cross_entropy(os.head.logits, label));
      metric.push_back(od.metric);
      metric.push_back(os.metric);
      labels.push_back(slot.class_id);
      labels.push_back(slot.class_id);
      kl.push_back(mutual_kl(od.head.logits, os.head.logits));
    }
    terms = total_loss(mean(stack(ce)), hard_mining_triplet(metric, labels, static_cast<Real>(config_.margin),
                                                            config_.mining),
                       mean(stack(kl)));
    terms.total.backward();
  } catch (const NumericError& e) {
    std::string where = "epoch " + std::to_string(epoch) + " step " + std::to_string(state_.step);
    if (!dump_dir_.empty()) {
      save_checkpoint(dump_dir_, checkpoint());
      std::ofstream(dump_dir_ / "diagnostic.txt") << where << ": " << e.what() << '\n';
      where += ", state dumped to " + dump_dir_.string();
    }
    throw NumericError("non-finite value at " + where + ": " + e.what());
  }
  const auto params = model_.params().named();
  sgd_.step(params, learning_rate(config_, ParamGroup::kBackbone, epoch),
            learning_rate(config_, ParamGroup::kHead, epoch));
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  ++state_.step;
  return terms.report();
}

std::vector<LossReport> Trainer::train_epoch(std::ostream* log) {
  const auto plans = plan_epoch();
  std::vector<LossReport> reports;
  reports.reserve(plans.size());
  for (std::size_t b = 0; b < plans.size(); ++b) {
    reports.push_back(train_step(plans[b], b));
    if (log) log_row(*log, state_.epoch, state_.step - 1, reports.back());
  }
  ++state_.epoch;
  return reports;
}

MetricsReport Trainer::evaluate() const { return evaluate_split(model_, split_); }

double Trainer::validation_metric(const MetricsReport& r) { return r.sdm1 ? *r.sdm1 : r.recall1; }

void Trainer::note_validation(double metric) {
  if (!state_.best_metric || metric > *state_.best_metric) {
    state_.best_metric = metric;
    state_.best_epoch = state_.epoch - 1;
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = config_;
  ck.state = state_;
  ck.table = table_;
  for (const auto& p : model_.params().named()) ck.params[p.name] = p.tensor.detach();
  for (const auto& [name, v] : sgd_.velocities()) {
    ck.velocities[name] = Tensor::from_data(ck.params.at(name).shape(), v);
  }
  return ck;
}

void write_log_header(std::ostream& out) { out << "epoch,step,l_rpt,l_mtc,l_kl,total\n"; }

TrainOutcome run_training(Trainer& trainer, const fs::path& out,
                          const std::function<void(const EpochSummary&)>& on_epoch) {
  fs::create_directories(out);
  trainer.set_dump_dir(out / "nan_dump");
  {
    std::ofstream cfg(out / "config.txt", std::ios::binary);
    cfg << config_to_text(trainer.config());
  }
  const fs::path log_path = out / "train_log.csv";
  const bool fresh = trainer.state().epoch == 0 || !fs::exists(log_path);
  std::ofstream log(log_path, fresh ? std::ios::binary | std::ios::trunc : std::ios::binary | std::ios::app);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (fresh) write_log_header(log);

  const auto& cfg = trainer.config();
  while (!trainer.finished()) {
    const auto reports = trainer.train_epoch(&log);
    log.flush();
    EpochSummary summary;
    summary.epoch = trainer.state().epoch - 1;
    for (const auto& r : reports) {
      summary.mean.l_rpt += r.l_rpt / static_cast<Real>(reports.size());
      summary.mean.l_mtc += r.l_mtc / static_cast<Real>(reports.size());
      summary.mean.l_kl += r.l_kl / static_cast<Real>(reports.size());
      summary.mean.total += r.total / static_cast<Real>(reports.size());
    }
    if (trainer.state().epoch % cfg.eval_interval == 0 || trainer.finished()) {
      summary.validation = trainer.evaluate();
      const auto before = trainer.state().best_metric;
      trainer.note_validation(Trainer::validation_metric(*summary.validation));
      if (trainer.state().best_metric != before) save_checkpoint(out / "best", trainer.checkpoint());
    }
    if (on_epoch) on_epoch(summary);
  }
  save_checkpoint(out / "checkpoint", trainer.checkpoint());
  TrainOutcome outcome{trainer.evaluate(), trainer.state()};
  write_metrics_csv(out / "metrics.csv", {MetricsRow{"query", "none", 0, outcome.final_report}});
  return outcome;
}

MetricsReport evaluate_checkpoint(const TrainConfig& config, const fs::path& checkpoint, const DatasetSplit& split) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (model_section(ck.config) != model_section(config)) {
    throw VersionError("checkpoint " + checkpoint.string() + " was trained with different model settings");
  }
  Model model(config.model, config.seed);
  model.load_state(ck.params);
  return evaluate_split(model, split);
}

}  // namespace ceusp
