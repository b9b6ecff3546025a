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

#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ceusp/config.hpp"
#include "ceusp/errors.hpp"
#include "ceusp/eval.hpp"
#include "ceusp/gradcheck.hpp"
#include "ceusp/sampler.hpp"
#include "ceusp/train.hpp"

namespace ceusp {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c, bool out_required = false) {
  sub->add_option("--config", c.config, "Config file (key=value lines); desk preset when omitted");
  sub->add_option("--seed", c.seed, "Seed overriding train.seed");
  auto* out = sub->add_option("--out", c.out, "Output directory or file");
  if (out_required) out->required();
  sub->add_option("--set", c.overrides, "Extra key=value override, repeatable");
}

TrainConfig resolve(const Common& c, TrainConfig base) {
  TrainConfig cfg = c.config.empty() ? std::move(base) : load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v;
  return s.str();
}

void print_report(std::ostream& out, const MetricsReport& m) {
  out << "R@1=" << fmt(m.recall1) << " R@5=" << fmt(m.recall5) << " R@10=" << fmt(m.recall10)
      << " R@top1=" << fmt(m.r_top1) << " AP=" << fmt(m.ap) << " SDM@1=" << fmt(m.sdm1) << " SDM@3=" << fmt(m.sdm3)
      << " SDM@5=" << fmt(m.sdm5) << " queries=" << m.n_queries << '\n';
}

// Evaluation settings come from the checkpoint unless --config is given.
TrainConfig eval_config(const Common& c, const std::string& checkpoint) {
  if (!c.config.empty()) return resolve(c, TrainConfig::desk());
  TrainConfig cfg = load_checkpoint(checkpoint).config;
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

Model load_model(const TrainConfig& cfg, const std::string& checkpoint) {
  const auto ck = load_checkpoint(checkpoint);
  Model model(cfg.model, cfg.seed);
  model.load_state(ck.params);
  return model;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-view drone/satellite geo-localization trainer and evaluator", "ceusp"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, grad_c, audit_c, sweep_c, attn_c;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as metadata.csv + CTEN files");
  add_common(gen, gen_c, true);

  auto* train = app.add_subcommand("train", "Train and write log, checkpoints and metrics.csv");
  add_common(train, train_c, true);
  std::string resume;
  train->add_option("--resume", resume, "Checkpoint directory to continue from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the query/gallery split");
  add_common(eval, eval_c);
  std::string eval_ck;
  eval->add_option("--checkpoint", eval_ck, "Checkpoint directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Central-difference gradient checks");
  add_common(grad, grad_c);
  double grad_tol = 1e-5;
  grad->add_option("--tol", grad_tol, "Pass threshold on the max relative error");

  auto* audit = app.add_subcommand("sample-audit", "Print the batch plan of one epoch as CSV");
  add_common(audit, audit_c);
  int audit_epoch = 0;
  audit->add_option("--epoch", audit_epoch, "Epoch to plan")->required();

  auto* sweep = app.add_subcommand("shift-sweep", "Position-shift robustness sweep");
  add_common(sweep, sweep_c);
  std::string sweep_ck;
  sweep->add_option("--checkpoint", sweep_ck, "Checkpoint directory")->required();

  auto* attn = app.add_subcommand("export-attn", "Export attention magnitude maps of query images as CTEN");
  add_common(attn, attn_c, true);
  std::string attn_ck;
  std::size_t attn_count = 4;
  attn->add_option("--checkpoint", attn_ck, "Checkpoint directory")->required();
  attn->add_option("--count", attn_count, "Number of query images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (argc > 1 && argv[1][0] != '-' && app.get_subcommands().empty()) {
      err << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    } else {
      err << "error: " << e.what() << "\n\n" << app.help();
    }
    return kExitUsage;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_c, TrainConfig::desk());
      auto opts = cfg.data.synthetic;
      if (gen_c.seed) opts.seed = *gen_c.seed;
      auto split = generate_synthetic(opts);
      save_dataset(split, gen_c.out);
      out << "wrote " << split.train.size() << " train, " << split.query.size() << " query, "
          << split.gallery.size() << " gallery samples to " << gen_c.out << '\n';
    } else if (*train) {
      std::optional<Trainer> trainer;
      if (!resume.empty()) {
        auto ck = load_checkpoint(resume);
        trainer.emplace(ck, load_data(ck.config.data));
      } else {
        const auto cfg = resolve(train_c, TrainConfig::desk());
        trainer.emplace(cfg, load_data(cfg.data));
      }
      const auto outcome = run_training(*trainer, train_c.out, [&](const EpochSummary& s) {
        out << "epoch " << s.epoch << " l_rpt=" << fmt(s.mean.l_rpt) << " l_mtc=" << fmt(s.mean.l_mtc)
            << " l_kl=" << fmt(s.mean.l_kl) << " total=" << fmt(s.mean.total);
        if (s.validation) out << " SDM@1=" << fmt(s.validation->sdm1) << " R@1=" << fmt(s.validation->recall1);
        out << std::endl;
      });
      print_report(out, outcome.final_report);
    } else if (*eval) {
      const auto cfg = eval_config(eval_c, eval_ck);
      const auto report = evaluate_checkpoint(cfg, eval_ck, load_data(cfg.data));
      print_report(out, report);
      const std::vector<MetricsRow> rows{{"query", "none", 0, report}};
      if (!eval_c.out.empty()) {
        fs::create_directories(eval_c.out);
        write_metrics_csv(fs::path(eval_c.out) / "metrics.csv", rows);
      }
    } else if (*grad) {
      const std::uint64_t seed = grad_c.seed.value_or(0);
      const auto results = gradient_suite(seed);
      for (const auto& r : results) out << std::left << std::setw(18) << r.name << ' ' << r.max_rel_err << '\n';
      const Real worst = max_error(results);
      out << "max_rel_err=" << worst << '\n';
      return worst < grad_tol ? kExitOk : kExitNumeric;
    } else if (*audit) {
      // The audit defaults to the published sampler schedule over the desk classes.
      TrainConfig base = TrainConfig::desk();
      base.sampler = TrainConfig::full().sampler;
      const auto cfg = resolve(audit_c, base);
      auto sampler = cfg.sampler;
      sampler.seed = cfg.seed;
      const auto split = load_data(cfg.data);
      std::optional<EmbeddingTable> table;
      if (phase_ratios(audit_epoch, sampler).fss > 0 || !split.has_coordinates()) {
        table = refresh_similarity(Model(cfg.model, cfg.seed), split.train, audit_epoch);
      }
      const auto plans = build_epoch_plan(audit_epoch, class_locations(split.train), table ? &*table : nullptr,
                                          sampler);
      if (audit_c.out.empty()) {
        write_sample_audit(out, audit_epoch, plans);
      } else {
        std::ofstream f(audit_c.out, std::ios::binary);
        if (!f) throw DataError("cannot write " + audit_c.out);
        write_sample_audit(f, audit_epoch, plans);
      }
    } else if (*sweep) {
      const auto cfg = eval_config(sweep_c, sweep_ck);
      const auto split = load_data(cfg.data);
      const auto cells = robustness_sweep(load_model(cfg, sweep_ck), split);
      out << "mode  k  px  AP      dAP      SDM@1\n";
      for (const auto& c : cells) {
        out << std::left << std::setw(5) << shift_mode_name(c.mode) << ' ' << std::setw(2) << c.k << ' '
            << std::setw(3) << c.pixels << ' ' << fmt(c.report.ap) << "  " << std::showpos << std::fixed
            << std::setprecision(4) << c.ap_delta << std::noshowpos << "  " << fmt(c.report.sdm1) << '\n';
      }
      if (!sweep_c.out.empty()) {
        fs::create_directories(sweep_c.out);
        write_metrics_csv(fs::path(sweep_c.out) / "metrics.csv", sweep_rows(cells));
      }
    } else if (*attn) {
      const auto cfg = eval_config(attn_c, attn_ck);
      const auto split = load_data(cfg.data);
      const Model model = load_model(cfg, attn_ck);
      fs::create_directories(attn_c.out);
      const std::size_t n = std::min(attn_count, split.query.size());
      for (std::size_t i = 0; i < n; ++i) {
        const auto path = fs::path(attn_c.out) / ("attention_" + std::to_string(i) + ".cten");
        export_attention(model, split.query[i].image, path);
        out << path.string() << " class " << split.query[i].meta.class_id << '\n';
      }
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace ceusp
