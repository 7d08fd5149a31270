/*
 * Copyright 2026 The DLEN Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dlen/pipeline.hpp"

namespace {

// Exit codes: 0 ok, 1 unexpected, 2 config, 3 io, 4 numeric, 5 checkpoint,
// 6 gradient check failure, 7 mode misuse.
enum ExitCode {
  kOk = 0,
  kUnexpected = 1,
  kConfig = 2,
  kIo = 3,
  kNumeric = 4,
  kCheckpoint = 5,
  kGradCheck = 6,
  kMode = 7,
};

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
};

dlen::ExperimentConfig load_config(const GlobalArgs& g) {
  if (g.config_path.empty()) throw dlen::ConfigError("--config is required");
  dlen::ExperimentConfig cfg = dlen::load_experiment_config(g.config_path);
  if (g.seed_set) cfg.training.seed = g.seed;
  return cfg;
}

void print_auc_report(const dlen::AucReport& report) {
  std::printf("%-16s %10s %8s %8s\n", "task", "auc", "n_pos", "n_neg");
  for (const auto& t : report.tasks) {
    std::printf("%-16s %10.6f %8lld %8lld\n", t.task.c_str(), t.auc,
                static_cast<long long>(t.n_pos), static_cast<long long>(t.n_neg));
  }
}

void print_latent(const dlen::LatentMetrics& lm) {
  if (lm.has_or) std::printf("latent auc vs any-interaction: %.6f\n", lm.auc_or);
  if (lm.has_true) std::printf("latent auc vs hidden truth:    %.6f\n", lm.auc_true);
}

int cmd_gen_data(const GlobalArgs& g) {
  const auto cfg = load_config(g);
  const auto result = dlen::run_gen_data(cfg, g.out_dir);
  std::printf("wrote %lld rows\n  data:    %s\n  sidecar: %s\n",
              static_cast<long long>(result.n_rows), result.train_path.c_str(),
              result.sidecar_path.c_str());
  return kOk;
}

int cmd_train(const GlobalArgs& g) {
  const auto cfg = load_config(g);
  const auto result = dlen::run_train(cfg, g.out_dir, g.threads);
  std::printf("trained %s for %zu epoch(s)\n", dlen::to_string(cfg.model.kind).c_str(),
              result.epoch_losses.size());
  if (!result.final_auc.tasks.empty()) print_auc_report(result.final_auc);
  print_latent(result.final_latent);
  std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
  return kOk;
}

int cmd_eval(const GlobalArgs& g, const std::string& checkpoint, const std::string& data,
             const std::string& baseline) {
  const auto cfg = load_config(g);
  const std::string data_path =
      data.empty() ? dlen::resolve_path(g.out_dir, cfg.data.train_path) : data;
  const auto result = dlen::run_eval(cfg, checkpoint, data_path, g.out_dir, baseline, g.threads);
  print_auc_report(result.report);
  print_latent(result.latent);
  if (result.has_gains) {
    std::printf("%-16s %10s %10s %10s\n", "task", "model", "baseline", "gain");
    for (const auto& t : result.gains.tasks) {
      std::printf("%-16s %10.6f %10.6f %+10.6f\n", t.task.c_str(), t.model_auc, t.baseline_auc,
                  t.gain);
    }
  }
  return kOk;
}

int cmd_gradcheck(const GlobalArgs& g, const std::string& model_arg, int n_seeds) {
  std::vector<dlen::ModelKind> kinds;
  if (model_arg == "all") {
    kinds = {dlen::ModelKind::MMOE, dlen::ModelKind::CGC, dlen::ModelKind::DLEN};
  } else {
    kinds = {dlen::model_kind_from_string(model_arg)};
  }
  const std::uint64_t base_seed = g.seed_set ? g.seed : 1;
  bool all_passed = true;
  for (const auto kind : kinds) {
    const auto outcome = dlen::run_gradcheck(kind, base_seed, n_seeds);
    for (std::size_t i = 0; i < outcome.reports.size(); ++i) {
      const auto& r = outcome.reports[i];
      const bool ok = r.max_rel_error < dlen::kGradCheckThreshold;
      std::printf("%-5s seed=%llu max_rel_error=%.3e worst=%s[%lld] %s\n",
                  dlen::to_string(kind).c_str(),
                  static_cast<unsigned long long>(outcome.seeds[i]), r.max_rel_error,
                  r.worst_param.c_str(), static_cast<long long>(r.worst_index),
                  ok ? "ok" : "FAIL");
    }
    all_passed = all_passed && outcome.passed;
  }
  if (!all_passed) {
    std::fprintf(stderr, "gradient check failed (threshold %.1e)\n", dlen::kGradCheckThreshold);
    return kGradCheck;
  }
  return kOk;
}

int cmd_bench(const GlobalArgs& g) {
  const auto cfg = load_config(g);
  const auto result = dlen::run_bench(cfg, g.out_dir, g.threads);
  std::printf("%-6s %-16s %10s %10s %12s\n", "model", "task", "mean_auc", "std_auc", "mean_gain");
  for (std::size_t k = 0; k < result.kinds.size(); ++k) {
    for (std::size_t t = 0; t < result.task_names.size(); ++t) {
      const auto& cell = result.cells[k][t];
      std::printf("%-6s %-16s %10.6f %10.6f %+12.6f\n", dlen::to_string(result.kinds[k]).c_str(),
                  result.task_names[t].c_str(), cell.mean_auc, cell.std_auc, cell.mean_gain);
    }
  }
  const auto [lt, lt_sd] = dlen::detail::mean_std(result.latent_auc_true);
  const auto [lo, lo_sd] = dlen::detail::mean_std(result.latent_auc_or);
  const auto [by, by_sd] = dlen::detail::mean_std(result.bayes_auc);
  std::printf("latent auc vs truth: %.6f (sd %.6f)\n", lt, lt_sd);
  std::printf("latent auc vs any-interaction: %.6f (sd %.6f)\n", lo, lo_sd);
  std::printf("bayes-optimal auc vs truth: %.6f (sd %.6f)\n", by, by_sd);
  std::printf("report: %s\n", result.report_path.c_str());
  return kOk;
}

int cmd_rank_sim(const GlobalArgs& g, const std::string& checkpoint, bool per_set) {
  const auto cfg = load_config(g);
  const auto result = dlen::run_rank_sim(cfg, checkpoint, g.out_dir, per_set, g.threads);
  std::printf("%-9s %6s %16s %22s %8s\n", "mode", "k", "detest_fraction", "expected_interactions",
              "n_sets");
  for (const auto* r : {&result.latent, &result.composed}) {
    std::printf("%-9s %6lld %16.6f %22.6f %8lld\n",
                r == &result.latent ? "latent" : "composed", static_cast<long long>(r->k),
                r->detest_fraction, r->expected_interactions, static_cast<long long>(r->n_sets));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task ranking models with Bayesian label decomposition"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "Experiment config (JSON)");
  app.add_option("--out", g.out_dir, "Output directory (default: current directory)");
  auto* seed_opt = app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--threads", g.threads, "Worker threads for evaluation passes")
      ->check(CLI::Range(1, 256));

  // Global flags may appear before or after the subcommand name.
  app.fallthrough();
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and sidecar");
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
  std::string eval_checkpoint = "checkpoint.dlen";
  std::string eval_data;
  std::string eval_baseline;
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint path (default: checkpoint.dlen)");
  eval->add_option("--data", eval_data, "Dataset to evaluate (default: config data path)");
  eval->add_option("--baseline", eval_baseline, "Baseline auc_report.tsv for per-task gains");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string gc_model = "all";
  int gc_seeds = 5;
  gradcheck->add_option("--model", gc_model, "mmoe, cgc, dlen, or all")
      ->check(CLI::IsMember({"mmoe", "cgc", "dlen", "all"}));
  gradcheck->add_option("--seeds", gc_seeds, "Number of seeds per model")->check(CLI::Range(1, 64));

  auto* bench = app.add_subcommand("bench", "Train all architectures across the bench seeds");
  auto* rank_sim = app.add_subcommand("rank-sim", "Fusion ranking simulation on synthetic truth");
  std::string rs_checkpoint = "checkpoint.dlen";
  bool rs_per_set = false;
  rank_sim->add_option("--checkpoint", rs_checkpoint, "Checkpoint path (default: checkpoint.dlen)");
  rank_sim->add_flag("--per-set", rs_per_set, "Also write per-impression-set detail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    const std::string ckpt_dir = g.out_dir;
    if (gen->parsed()) return cmd_gen_data(g);
    if (train->parsed()) return cmd_train(g);
    if (eval->parsed()) {
      return cmd_eval(g, dlen::resolve_path(ckpt_dir, eval_checkpoint), eval_data, eval_baseline);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(g, gc_model, gc_seeds);
    if (bench->parsed()) return cmd_bench(g);
    if (rank_sim->parsed()) {
      return cmd_rank_sim(g, dlen::resolve_path(ckpt_dir, rs_checkpoint), rs_per_set);
    }
    return kConfig;
  } catch (const dlen::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kConfig;
  } catch (const dlen::CheckpointError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kCheckpoint;
  } catch (const dlen::ModeError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kMode;
  } catch (const dlen::IoError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kIo;
  } catch (const dlen::NumericError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kNumeric;
  } catch (const dlen::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kUnexpected;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return kUnexpected;
  }
}
