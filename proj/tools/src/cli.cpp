// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "est/checkpoint.hpp"
#include "est/config.hpp"
#include "est/cost_model.hpp"
#include "est/diagnostics.hpp"
#include "est/errors.hpp"
#include "est/trainer.hpp"
#include "hessian_command.hpp"

namespace est_tools {
namespace {

namespace fs = std::filesystem;
using namespace est;

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string percent(double fraction) { return fixed(fraction * 100.0, 1) + "%"; }

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write '" + path.string() + "'");
}

// ---- plan ----

void print_plan(std::ostream& out, const std::string& source, const TrainConfig& cfg) {
  const auto tokens = static_cast<std::int64_t>(cfg.batch_size * cfg.model.seq_len);
  const ModuleCosts costs = module_costs(cfg.model, tokens, cfg.backward_multiplier);
  const CostReport report = total_cost(cfg.scheduler, costs, cfg.model.n_layers);
  const auto& m = cfg.model;
  out << "scheduler: " << source << "\n";
  out << "model: layers=" << m.n_layers << " heads=" << m.n_heads << " head_dim=" << m.head_dim
      << " hidden=" << m.hidden << " mlp=" << m.mlp_inner << " seq_len=" << m.seq_len << " tokens_per_step=" << tokens
      << "\n";
  out << "module_flops: mha=" << format_double(costs.mha) << " mlp=" << format_double(costs.mlp) << "\n";
  out << "stage  end_step  steps  p_head  p_mlp  p_layer  step_flops  stage_flops\n";
  const auto stages = cfg.scheduler.stages();
  for (std::size_t t = 0; t < report.stages.size(); ++t) {
    const StageCost& s = report.stages[t];
    out << std::setw(5) << t + 1 << std::setw(10) << stages[t].end_step << std::setw(7) << s.steps << std::setw(8)
        << format_double(s.rates.head) << std::setw(7) << format_double(s.rates.mlp) << std::setw(9)
        << format_double(s.rates.layer) << "  " << format_double(s.step_cost) << "  " << format_double(s.total) << "\n";
  }
  out << "baseline_flops: " << format_double(report.baseline_total) << "\n";
  out << "est_flops: " << format_double(report.est_total) << "\n";
  out << "savings: " << percent(report.savings_fraction) << "\n";
  for (const auto& w : cfg.scheduler.warnings()) out << "warning: " << w << "\n";
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::int64_t stop_after = 0;
};

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06lld", static_cast<long long>(step));
  return buf;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<Checkpoint> resume;
  TrainConfig cfg;
  if (!a.resume.empty()) {
    resume = read_checkpoint(a.resume);
    cfg = resume->config;
  }
  if (!a.config.empty()) {
    cfg = load_config(a.config);
    if (a.seed) cfg.seed.seed = *a.seed;
  } else if (!resume) {
    throw ConfigError("train needs --config or --resume");
  }
  for (const auto& w : cfg.validate()) err << "warning: " << w << "\n";

  const fs::path dir = a.out;
  fs::create_directories(dir);
  std::ofstream run_log(dir / "run.log", std::ios::app);
  run_log << timestamp() << " start config_hash=" << config_hash(cfg) << " precision=" << kPrecisionName
          << (resume ? " resume_from_step=" + std::to_string(resume->step) : std::string()) << "\n";
  write_text(dir / "config", serialize_config(cfg));

  const TrainData data = load_train_data(cfg);
  LossLog partial = resume ? resume->log : LossLog{};
  std::vector<EvalRecord> evals = resume ? resume->evals : std::vector<EvalRecord>{};
  const std::int64_t report_every = std::max<std::int64_t>(1, cfg.steps / 20);

  TrainOptions opts;
  opts.resume = resume ? &*resume : nullptr;
  opts.stop_after = a.stop_after;
  opts.on_step = [&](const LossRecord& r) {
    partial.append(r);
    if (r.step % report_every == 0 || r.step == cfg.steps) {
      out << "step " << r.step << "/" << cfg.steps << " stage " << r.stage << " loss " << fixed(r.loss, 4) << " lr "
          << format_double(r.lr) << "\n";
    }
  };
  opts.on_eval = [&](const EvalRecord& r) {
    evals.push_back(r);
    out << "eval step " << r.step << " loss " << fixed(r.loss, 4) << "\n";
  };
  opts.on_checkpoint = [&](const Checkpoint& ck) {
    if (cfg.checkpoint_interval > 0 && ck.step % cfg.checkpoint_interval == 0 && ck.step < cfg.steps) {
      const fs::path path = dir / "checkpoints" / checkpoint_name(ck.step);
      write_checkpoint(ck, path);
      run_log << timestamp() << " checkpoint " << path.string() << "\n";
    }
  };

  TrainResult result;
  try {
    result = train(cfg, data, opts);
  } catch (const NumericalError&) {
    partial.write_csv(dir / "loss_log.csv");
    write_eval_csv(evals, dir / "eval_log.csv");
    run_log << timestamp() << " abort numerical\n";
    throw;
  }

  result.log.write_csv(dir / "loss_log.csv");
  write_eval_csv(result.evals, dir / "eval_log.csv");
  write_checkpoint(result.final_checkpoint, dir / "final");

  const double total = result.log.empty() ? 0.0 : result.log.back().cum_flops;
  // Baseline for the steps actually run; equals baseline_total for a complete run.
  const double baseline_done = result.planned.baseline_total * static_cast<double>(result.final_checkpoint.step) /
                               static_cast<double>(cfg.steps);
  const double final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  std::vector<std::pair<std::string, std::string>> summary = {
      {"steps", std::to_string(result.final_checkpoint.step)},
      {"final_loss", format_double(final_loss)},
      {"final_eval_loss", result.evals.empty() ? std::string("nan") : format_double(result.evals.back().loss)},
      {"total_flops", format_double(total)},
      {"planned_flops", format_double(result.planned.est_total)},
      {"baseline_flops", format_double(result.planned.baseline_total)},
      {"planned_savings", format_double(result.planned.savings_fraction)},
      {"measured_savings", format_double(1.0 - total / baseline_done)},
      {"config_hash", config_hash(cfg)},
      {"precision", kPrecisionName},
  };
  write_text(dir / "summary", format_key_values(summary));
  run_log << timestamp() << " done step=" << result.final_checkpoint.step << "\n";

  out << "final_loss: " << fixed(final_loss, 4) << "\n";
  if (!result.evals.empty()) out << "final_eval_loss: " << fixed(result.evals.back().loss, 4) << "\n";
  out << "total_flops: " << format_double(total) << "\n";
  out << "savings: " << percent(1.0 - total / baseline_done) << "\n";
  return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt, const std::string& data_path, std::size_t batches, std::ostream& out) {
  Checkpoint ck = read_checkpoint(ckpt);
  const Corpus corpus = load_corpus(data_path);
  if (corpus.vocab > ck.config.model.vocab) throw ConfigError("data vocabulary exceeds the model's");
  if (batches == 0) batches = ck.config.eval_batches;
  const double loss = evaluate(ck.params, corpus, batches, ck.config.batch_size);
  out << "step: " << ck.step << "\n";
  out << "batches: " << batches << "\n";
  out << "eval_loss: " << format_double(loss) << "\n";
  return kExitOk;
}

// ---- hessian-trace ----

int cmd_hessian(const HessianRequest& req, const std::string& precision, const std::string& csv, std::ostream& out) {
  HessianOutcome r;
  if (precision == "fp64") {
    r = run_hessian_fp64(req);
  } else if (precision == "fp32") {
    r = run_hessian_fp32(req);
  } else {
    throw ConfigError("--precision must be fp32 or fp64");
  }
  out << "value: " << format_double(r.value) << "\n";
  out << "n_probes: " << r.n_probes << "\n";
  out << "std_error: " << format_double(r.std_error) << "\n";
  out << "fd_epsilon: " << format_double(r.fd_epsilon) << "\n";
  out << "loss: " << format_double(r.eval_loss) << "\n";
  out << "precision: " << precision << "\n";
  if (r.check_value) {
    const double rel = std::abs(*r.check_value - r.value) / std::max(std::abs(r.value), 1e-300);
    out << "check_value: " << format_double(*r.check_value) << "\n";
    out << "check_relative_difference: " << format_double(rel) << "\n";
    out << "stable: " << (rel <= 0.1 ? "yes" : "no") << "\n";
  }
  if (!csv.empty()) {
    std::ostringstream s;
    s << "probe,vhv\n";
    for (std::size_t k = 0; k < r.probes.size(); ++k) s << k << "," << format_double(r.probes[k]) << "\n";
    write_text(csv, s.str());
  }
  return kExitOk;
}

// ---- curves ----

struct CurvesArgs {
  std::string log;
  std::string log2;
  std::string out;
  std::int64_t window = 0;
  std::optional<double> level;
  std::size_t smoothing = 50;
  std::int64_t slope_window = 200;
};

// Largest window up to 100 that fits inside every pair of adjacent stages.
std::int64_t default_window(const LossLog& log) {
  std::vector<std::int64_t> lengths;
  std::int64_t begin = 0;
  const auto recs = log.records();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (i + 1 == recs.size() || recs[i + 1].stage != recs[i].stage) {
      lengths.push_back(recs[i].step - begin);
      begin = recs[i].step;
    }
  }
  std::int64_t w = 100;
  for (std::int64_t len : lengths) w = std::min(w, len);
  return std::max<std::int64_t>(w, 1);
}

double min_smoothed(const LossLog& log, std::size_t width) {
  double best = std::numeric_limits<double>::infinity();
  double running = 0;
  const auto recs = log.records();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    running += recs[i].loss;
    if (i >= width) running -= recs[i - width].loss;
    best = std::min(best, running / static_cast<double>(std::min(i + 1, width)));
  }
  return best;
}

int cmd_curves(const CurvesArgs& a, std::ostream& out) {
  std::vector<std::pair<std::string, LossLog>> logs;
  logs.emplace_back("a", LossLog::read_csv(fs::path(a.log)));
  if (!a.log2.empty()) logs.emplace_back("b", LossLog::read_csv(fs::path(a.log2)));

  std::ostringstream csv;
  csv << "record,log,step,window,pre_mean,post_mean,drop,level,slope,points\n";
  for (const auto& [name, log] : logs) {
    const std::int64_t window = a.window > 0 ? a.window : default_window(log);
    for (const auto& t : transition_drop(log, window)) {
      csv << "transition," << name << "," << t.step << "," << t.window << "," << format_double(t.pre_mean) << ","
          << format_double(t.post_mean) << "," << format_double(t.drop) << ",,,\n";
      out << "transition log=" << name << " step=" << t.step << " window=" << t.window
          << " pre=" << fixed(t.pre_mean, 4) << " post=" << fixed(t.post_mean, 4) << " drop=" << fixed(t.drop, 4)
          << "\n";
    }
  }
  if (logs.size() == 2) {
    const SlopeOptions opts{a.smoothing, a.slope_window};
    const double level = a.level ? *a.level
                                 : std::max(min_smoothed(logs[0].second, a.smoothing),
                                            min_smoothed(logs[1].second, a.smoothing));
    const auto [sa, sb] = slope_compare(logs[0].second, logs[1].second, level, opts);
    for (const auto& [name, s] : {std::pair{"a", sa}, std::pair{"b", sb}}) {
      csv << "slope," << name << "," << s.crossing_step << "," << opts.window << ",,,," << format_double(level) << ","
          << format_double(s.slope) << "," << s.points << "\n";
      out << "slope log=" << name << " level=" << fixed(level, 4) << " crossing_step=" << s.crossing_step
          << " slope=" << format_double(s.slope) << "\n";
    }
  }
  write_text(a.out, csv.str());
  return kExitOk;
}

// ---- corpus ----

int cmd_corpus(std::size_t bytes, std::uint64_t seed, const std::string& path, std::ostream& out) {
  if (bytes == 0) throw ConfigError("--bytes must be positive");
  write_text(path, synthetic_text(bytes, seed));
  out << "wrote " << bytes << " bytes to " << path << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Staged subnetwork training for small decoder-only transformers", "est"};
  app.require_subcommand(1);

  auto* plan = app.add_subcommand("plan", "Print the training-cost plan of a scheduler");
  std::string plan_config, plan_preset;
  double plan_scale = 1.0;
  auto* plan_cfg_opt = plan->add_option("--config", plan_config, "Run config");
  auto* plan_preset_opt = plan->add_option("--preset", plan_preset, "Scheduler preset name");
  plan->add_option("--scale", plan_scale, "Multiply preset end steps")->needs(plan_preset_opt);
  plan_cfg_opt->excludes(plan_preset_opt);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  TrainArgs targs;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--config", targs.config, "Run config");
  train_cmd->add_option("--out", targs.out, "Run directory")->required();
  train_cmd->add_option("--resume", targs.resume, "Checkpoint directory to continue from");
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Override seed.seed");
  train_cmd->add_option("--stop-after", targs.stop_after, "Stop after this step (for staged runs)");

  auto* eval_cmd = app.add_subcommand("eval", "Full-model loss of a checkpoint");
  std::string eval_ckpt, eval_data;
  std::size_t eval_batches = 0;
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_data, "Corpus file")->required();
  eval_cmd->add_option("--batches", eval_batches, "Evaluation batches (default: eval.batches)");

  auto* hess_cmd = app.add_subcommand("hessian-trace", "Hutchinson estimate of the loss Hessian trace");
  HessianRequest hreq;
  std::string precision = "fp64", hess_csv;
  hess_cmd->add_option("--ckpt", hreq.checkpoint, "Checkpoint directory")->required();
  hess_cmd->add_option("--data", hreq.data, "Corpus file")->required();
  hess_cmd->add_option("--probes", hreq.probes, "Number of probes")->default_val(64);
  hess_cmd->add_option("--epsilon", hreq.fd_epsilon, "Finite-difference step before norm scaling")->default_val(1e-3);
  hess_cmd->add_option("--seed", hreq.seed, "Probe seed")->default_val(0x5eed);
  hess_cmd->add_option("--batches", hreq.batches, "Fixed evaluation batches")->default_val(8);
  hess_cmd->add_option("--precision", precision, "fp32 or fp64")->default_val("fp64");
  hess_cmd->add_flag("--stability-check", hreq.stability_check, "Repeat at epsilon/10 and compare");
  hess_cmd->add_option("--out", hess_csv, "Per-probe CSV");

  auto* curves_cmd = app.add_subcommand("curves", "Stage-transition drops and loss slopes from loss logs");
  CurvesArgs cargs;
  double level = 0;
  curves_cmd->add_option("--log", cargs.log, "Loss log CSV")->required();
  curves_cmd->add_option("--log2", cargs.log2, "Second loss log CSV for slope comparison");
  curves_cmd->add_option("--out", cargs.out, "Analysis CSV")->required();
  curves_cmd->add_option("--window", cargs.window, "Transition window in steps");
  auto* level_opt = curves_cmd->add_option("--level", level, "Loss level for slope comparison");
  curves_cmd->add_option("--smoothing", cargs.smoothing, "Trailing-mean width")->default_val(50);
  curves_cmd->add_option("--slope-window", cargs.slope_window, "Slope fit window in steps")->default_val(200);

  auto* corpus_cmd = app.add_subcommand("corpus", "Write deterministic synthetic training text");
  std::size_t corpus_bytes = 2'000'000;
  std::uint64_t corpus_seed = 1;
  std::string corpus_out;
  corpus_cmd->add_option("--bytes", corpus_bytes, "Size in bytes")->default_val(2'000'000);
  corpus_cmd->add_option("--seed", corpus_seed, "Generator seed")->default_val(1);
  corpus_cmd->add_option("--out", corpus_out, "Output file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*plan) {
      TrainConfig cfg;
      std::string source;
      if (!plan_config.empty()) {
        cfg = load_config(plan_config);
        source = plan_config;
      } else if (!plan_preset.empty()) {
        cfg.scheduler = SamplingScheduler::preset(plan_preset, plan_scale);
        cfg.steps = cfg.scheduler.total_steps();
        source = plan_preset + " (scale " + format_double(plan_scale) + ")";
      } else {
        err << "plan: one of --config or --preset is required\n";
        return kExitUsage;
      }
      print_plan(out, source, cfg);
      return kExitOk;
    }
    if (*train_cmd) {
      if (*seed_opt) targs.seed = train_seed;
      return cmd_train(targs, out, err);
    }
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_batches, out);
    if (*hess_cmd) return cmd_hessian(hreq, precision, hess_csv, out);
    if (*curves_cmd) {
      if (*level_opt) cargs.level = level;
      return cmd_curves(cargs, out);
    }
    if (*corpus_cmd) return cmd_corpus(corpus_bytes, corpus_seed, corpus_out, out);
  } catch (const NumericalError& e) {
    err << "error: numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace est_tools
