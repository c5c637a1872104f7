// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <glob.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "einlin/config.hpp"
#include "einlin/einsum_kernel.hpp"
#include "einlin/errors.hpp"
#include "einlin/io.hpp"
#include "einlin/mu_scaling.hpp"
#include "einlin/scaling_laws.hpp"
#include "einlin/structure_space.hpp"
#include "einlin/train.hpp"

namespace einlin::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Largest memory the shared training-batch cache of a sweep may hold.
constexpr double kPoolBytes = 1.0e9;

struct AuditArgs {
  std::string theta;
  std::int64_t din = 0;
  std::int64_t dout = 0;
  std::int64_t d0 = 64;
  double lr = 1e-3;
  std::string emit_layer;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string config;
  std::string out;
  bool quiet = false;
};

struct SweepArgs {
  std::string config;
  std::string out;
  int jobs = 1;
  bool quiet = false;
};

struct FitArgs {
  std::string metrics;
  std::string family;
  std::string dense_fit;
  std::string theta;
  std::string out;
};

struct ReportArgs {
  std::string sweep_dir;
  std::string dense_family = "dense";
  std::string out;
};

void emit_json(const json& j, const std::string& out_path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (!out_path.empty()) write_file_atomic(out_path, text);
  out << text;
}

// ---------------------------------------------------------------- audit

int cmd_audit(const AuditArgs& a, std::ostream& out) {
  const ThetaVector theta = parse_theta(a.theta);
  const EinsumSpec spec = instantiate_spec(theta, a.din, a.dout);
  const TaxonomyReport tax = taxonomy(theta);
  const FactorIoDims io = factor_io_dims(spec);
  const InitPlan init = init_plan(spec);
  const LrPlan lr = adam_lr_plan(spec, a.lr, a.d0);
  const EffectiveRates rates = sgd_and_rsgd_exponents(spec);

  json j;
  j["theta"] = to_json(theta);
  j["theta_text"] = format_theta(theta);
  j["structure"] = to_string(recognize(theta));
  j["spec"] = to_json(spec);
  j["omega"] = tax.omega;
  j["psi"] = tax.psi;
  j["nu"] = tax.nu;
  j["degenerate"] = tax.degenerate;
  j["flops"] = count_flops(spec);
  j["params"] = count_params(spec);
  j["predicted_rank"] = predicted_rank(spec);
  j["factor_io_dims"] = {{"d_in_a", io.d_in_a}, {"d_out_a", io.d_out_a}, {"d_in_b", io.d_in_b},
                         {"d_out_b", io.d_out_b}};
  j["sigma_a"] = init.sigma_a;
  j["sigma_b"] = init.sigma_b;
  j["lr_a"] = lr.lr_a;
  j["lr_b"] = lr.lr_b;
  j["base_lr"] = lr.base_lr;
  j["base_width"] = lr.base_width;
  j["optimizer"] = to_string(lr.optimizer);
  j["effective_rates"] = {{"rsgd_a", rates.rsgd_a},       {"rsgd_b", rates.rsgd_b},
                          {"mup_sgd_a", rates.mup_sgd_a}, {"mup_sgd_b", rates.mup_sgd_b},
                          {"condition", rsgd_mup_condition(spec)}};
  if (!a.emit_layer.empty()) {
    EinsumLayer layer = init_layer(spec, init, a.seed);
    layer.lr_a = lr.lr_a;
    layer.lr_b = lr.lr_b;
    save_layer(layer, a.emit_layer);
    j["layer_file"] = a.emit_layer;
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

void log_record(std::ostream& err, const std::string& tag, const MetricsRecord& r) {
  err << tag << " step " << r.step << " C=" << r.cumulative_training_flops
      << " train=" << r.train_loss << " eval=" << r.eval_loss
      << (r.status == "ok" ? "" : " [" + r.status + "]") << "\n";
}

std::string to_jsonl(const std::vector<MetricsRecord>& records, const RunInfo& info) {
  std::string text;
  for (const auto& r : records) text += to_json(r, info).dump() + "\n";
  return text;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const ExperimentConfig config = train_config_from_json(load_config(a.config, "train"));
  const std::string path = a.out.empty() ? run_file_name(config) : a.out;
  const Student probe(config, config.teacher.input_dim);
  const RunInfo info = run_info(config, probe);

  TrainOptions opts;
  std::mutex log_mu;
  if (!a.quiet) {
    opts.on_record = [&](const MetricsRecord& r) {
      std::lock_guard<std::mutex> lock(log_mu);
      log_record(err, config.family, r);
    };
  }
  const auto records = train(config, opts);
  write_file_atomic(path, to_jsonl(records, info));
  const auto& last = records.back();
  out << json{{"file", path},
              {"family", config.family},
              {"steps", last.step},
              {"status", last.status},
              {"final_eval_loss", last.eval_loss}}
             .dump()
      << "\n";
  if (last.status != "ok") {
    err << "error: training loss became non-finite at step " << last.step << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- sweep

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  const json raw = load_config(a.config, "sweep");
  const SweepConfig sweep = sweep_config_from_json(raw);
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");
  const fs::path dir(a.out);
  fs::create_directories(dir);

  struct Run {
    ExperimentConfig config;
    std::string file;
    std::string status;
    std::string error;
    double final_eval = 0.0;
    std::int64_t steps = 0;
  };
  std::vector<Run> runs;
  for (const auto& fam : sweep.families) {
    for (const auto w : sweep.widths) {
      for (const auto s : sweep.seeds) {
        Run r;
        r.config = sweep.base;
        r.config.structure = fam.structure;
        r.config.family = fam.name;
        r.config.width = w;
        r.config.seed = s;
        r.file = run_file_name(r.config);
        runs.push_back(std::move(r));
      }
    }
  }

  std::vector<std::size_t> pending;
  std::int64_t max_steps = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (fs::exists(dir / runs[i].file)) {
      runs[i].status = "skipped_existing";
      continue;
    }
    pending.push_back(i);
    try {
      const Student probe(runs[i].config, runs[i].config.teacher.input_dim);
      runs[i].steps = planned_steps(runs[i].config, probe.forward_macs());
      max_steps = std::max(max_steps, runs[i].steps);
    } catch (const Error&) {
      // Reported when the run itself is attempted.
    }
  }

  const auto& base = sweep.base;
  auto teacher = std::make_shared<const Teacher>(base.teacher);
  const double batch_bytes =
      static_cast<double>(base.batch_size) * static_cast<double>(base.teacher.input_dim + 1) * 8.0;
  const auto capacity = static_cast<std::size_t>(
      std::min(static_cast<double>(max_steps), std::floor(kPoolBytes / batch_bytes)));
  auto pool = std::make_shared<BatchPool>(teacher, base.batch_size, base.data_seed, capacity);
  std::shared_ptr<const Batch> eval;
  if (!pending.empty()) {
    eval = std::make_shared<const Batch>(eval_set(*teacher, base.eval_size, base.data_seed));
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      Run& run = runs[pending[k]];
      try {
        TrainOptions opts;
        opts.pool = pool;
        opts.eval = eval;
        const std::string tag = run.file;
        if (!a.quiet) {
          opts.on_record = [&, tag](const MetricsRecord& r) {
            std::lock_guard<std::mutex> lock(log_mu);
            log_record(err, tag, r);
          };
        }
        const auto records = train(run.config, opts);
        const Student probe(run.config, run.config.teacher.input_dim);
        write_file_atomic(dir / run.file, to_jsonl(records, run_info(run.config, probe)));
        run.status = records.back().status;
        run.final_eval = records.back().eval_loss;
      } catch (const std::exception& e) {
        run.status = "failed";
        run.error = e.what();
        std::lock_guard<std::mutex> lock(log_mu);
        err << "error: " << run.file << ": " << e.what() << "\n";
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(a.jobs, static_cast<int>(pending.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < jobs; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  json manifest{{"kind", "sweep_manifest"}, {"config", raw}, {"runs", json::array()}};
  int failed = 0;
  for (const auto& r : runs) {
    json e{{"file", r.file},
           {"family", r.config.family},
           {"width", r.config.width},
           {"seed", r.config.seed},
           {"status", r.status}};
    if (r.status == "ok" || r.status == "non_finite") {
      e["final_eval_loss"] = r.final_eval;
      e["steps"] = r.steps;
    }
    if (!r.error.empty()) e["error"] = r.error;
    if (r.status == "failed") ++failed;
    manifest["runs"].push_back(std::move(e));
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  out << json{{"manifest", (dir / "manifest.json").string()},
              {"runs", runs.size()},
              {"trained", pending.size()},
              {"failed", failed}}
             .dump()
      << "\n";
  return failed == 0 ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------- fit / report

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> files;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw Error("glob failed for '" + pattern + "'");
  std::sort(files.begin(), files.end());
  return files;
}

struct MetricsFile {
  std::string run_id;
  std::string family;
  std::optional<TaxonomyReport> taxonomy;
  RunCurve curve;
};

MetricsFile load_metrics(const std::string& path) {
  MetricsFile m;
  m.run_id = fs::path(path).stem().string();
  m.curve.run_id = m.run_id;
  for (const auto& line : read_jsonl(path)) {
    const MetricsRecord r = record_from_json(line);
    if (m.family.empty() && line.contains("family")) m.family = line.at("family").get<std::string>();
    if (!m.taxonomy && line.contains("omega") && line.contains("psi") && line.contains("nu")) {
      TaxonomyReport t;
      t.omega = line.at("omega").get<double>();
      t.psi = line.at("psi").get<double>();
      t.nu = line.at("nu").get<double>();
      m.taxonomy = t;
    }
    if (r.status == "ok") m.curve.points.push_back({r.cumulative_training_flops, r.eval_loss});
  }
  if (m.family.empty()) m.family = m.run_id.substr(0, m.run_id.find('_'));
  return m;
}

json taxonomy_json(const TaxonomyReport& t) {
  return json{{"omega", t.omega}, {"psi", t.psi}, {"nu", t.nu}};
}

// Frontier, fit and optional multiplier for one family; fit errors are
// reported in the document rather than thrown.
json family_report(const std::string& family, const std::vector<MetricsFile>& files,
                   const std::optional<ScalingFit>& dense_fit,
                   const std::optional<TaxonomyReport>& taxonomy_override, ScalingFit* fit_out) {
  std::vector<RunCurve> curves;
  std::optional<TaxonomyReport> tax = taxonomy_override;
  for (const auto& f : files) {
    curves.push_back(f.curve);
    if (!tax && f.taxonomy) tax = f.taxonomy;
  }
  json j{{"family", family}, {"runs", files.size()}};
  const auto frontier = extract_frontier(curves);
  j["frontier"] = json::array();
  for (const auto& p : frontier) j["frontier"].push_back(to_json(p));
  try {
    const ScalingFit fit = fit_power_law(frontier);
    j["fit"] = to_json(fit);
    if (fit_out) *fit_out = fit;
  } catch (const Error& e) {
    j["fit"] = nullptr;
    j["error"] = e.what();
  }
  j["multiplier"] = nullptr;
  if (dense_fit) {
    try {
      j["multiplier"] = to_json(compute_multiplier(*dense_fit, frontier));
    } catch (const Error& e) {
      j["multiplier_error"] = e.what();
    }
  }
  if (tax) {
    j["taxonomy"] = taxonomy_json(*tax);
    j["omega"] = tax->omega;
    j["psi"] = tax->psi;
    j["nu"] = tax->nu;
  }
  return j;
}

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  const auto paths = expand_glob(a.metrics);
  if (paths.empty()) throw ConfigError("no metrics files match '" + a.metrics + "'");
  std::vector<MetricsFile> files;
  std::set<std::string> families;
  for (const auto& p : paths) {
    MetricsFile m = load_metrics(p);
    if (!a.family.empty() && m.family != a.family) continue;
    families.insert(m.family);
    files.push_back(std::move(m));
  }
  if (files.empty()) throw ConfigError("no metrics files for family '" + a.family + "'");
  std::string family = a.family;
  if (family.empty()) family = families.size() == 1 ? *families.begin() : "mixed";

  std::optional<ScalingFit> dense;
  if (!a.dense_fit.empty()) {
    try {
      dense = fit_from_json(json::parse(read_file(a.dense_fit)));
    } catch (const json::parse_error& e) {
      throw ConfigError(a.dense_fit + ": " + e.what());
    }
  }
  std::optional<TaxonomyReport> tax;
  if (!a.theta.empty()) tax = taxonomy(parse_theta(a.theta));
  const json report = family_report(family, files, dense, tax, nullptr);
  emit_json(report, a.out, out);
  if (report.contains("error")) {
    err << "error: " << report.at("error").get<std::string>() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(a.sweep_dir)) throw ConfigError("not a directory: " + a.sweep_dir);
  const auto paths = expand_glob((fs::path(a.sweep_dir) / "*.jsonl").string());
  if (paths.empty()) throw ConfigError("no metrics files in " + a.sweep_dir);
  std::map<std::string, std::vector<MetricsFile>> by_family;
  for (const auto& p : paths) {
    MetricsFile m = load_metrics(p);
    by_family[m.family].push_back(std::move(m));
  }
  std::optional<ScalingFit> dense;
  json dense_doc;
  if (auto it = by_family.find(a.dense_family); it != by_family.end()) {
    ScalingFit fit;
    dense_doc = family_report(it->first, it->second, std::nullopt, std::nullopt, &fit);
    if (!dense_doc.at("fit").is_null()) dense = fit;
  } else {
    err << "warning: dense family '" << a.dense_family << "' not found; multipliers omitted\n";
  }
  json j{{"kind", "report"}, {"dense_family", a.dense_family}, {"families", json::array()}};
  for (const auto& [family, files] : by_family) {
    j["families"].push_back(family_report(family, files, dense, std::nullopt, nullptr));
  }
  emit_json(j, a.out, out);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"einlin: structured Einsum layers, taxonomy and scaling-law tooling", "einlin"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "einlin 0.1.0");

  AuditArgs audit;
  auto* c_audit = app.add_subcommand("audit", "Instantiate a θ-vector and print its taxonomy and μP plans");
  c_audit->add_option("--theta", audit.theta, "Seven comma-separated exponents or a preset name")->required();
  c_audit->add_option("--din", audit.din, "Input dimension")->required()->check(CLI::PositiveNumber);
  c_audit->add_option("--dout", audit.dout, "Output dimension")->required()->check(CLI::PositiveNumber);
  c_audit->add_option("--d0", audit.d0, "Base width of the learning-rate transfer")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c_audit->add_option("--lr", audit.lr, "Base learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  c_audit->add_option("--emit-layer", audit.emit_layer, "Write an initialized layer file");
  c_audit->add_option("--seed", audit.seed, "Seed of the emitted layer")->capture_default_str();

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Train one student and write its metrics as JSONL");
  c_train->add_option("--config", train_args.config, "Train config (kind: train)")->required();
  c_train->add_option("--out", train_args.out, "Metrics file (default <family>_<width>_<seed>.jsonl)");
  c_train->add_flag("--quiet", train_args.quiet, "No progress on stderr");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Train every (family, width, seed) of a sweep config");
  c_sweep->add_option("--config", sweep.config, "Sweep config (kind: sweep)")->required();
  c_sweep->add_option("--out", sweep.out, "Output directory")->required();
  c_sweep->add_option("--jobs", sweep.jobs, "Concurrent runs")->capture_default_str()->check(CLI::PositiveNumber);
  c_sweep->add_flag("--quiet", sweep.quiet, "No progress on stderr");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Extract the frontier of metrics files and fit a power law");
  c_fit->add_option("--metrics", fit.metrics, "Glob of metrics JSONL files")->required();
  c_fit->add_option("--family", fit.family, "Only use records of this family");
  c_fit->add_option("--dense-fit", fit.dense_fit, "Fit report of the dense reference");
  c_fit->add_option("--theta", fit.theta, "θ whose taxonomy is attached to the report");
  c_fit->add_option("--out", fit.out, "Also write the report to this file");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Fit every family of a sweep directory");
  c_report->add_option("--sweep-dir", report.sweep_dir, "Directory written by sweep")->required();
  c_report->add_option("--dense-family", report.dense_family, "Reference family for multipliers")
      ->capture_default_str();
  c_report->add_option("--out", report.out, "Also write the report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return kExitUsage;
  }

  try {
    if (c_audit->parsed()) return cmd_audit(audit, out);
    if (c_train->parsed()) return cmd_train(train_args, out, err);
    if (c_sweep->parsed()) return cmd_sweep(sweep, out, err);
    if (c_fit->parsed()) return cmd_fit(fit, out, err);
    if (c_report->parsed()) return cmd_report(report, out, err);
  } catch (const ConstraintViolation& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InfeasibleFactorization& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace einlin::cli
