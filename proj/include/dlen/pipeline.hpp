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

#pragma once

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dlen/checkpoint.hpp"
#include "dlen/config.hpp"
#include "dlen/data.hpp"
#include "dlen/fusion.hpp"
#include "dlen/gradcheck.hpp"
#include "dlen/metrics.hpp"
#include "dlen/models.hpp"
#include "dlen/optimizer.hpp"
#include "dlen/synth.hpp"

namespace dlen {

// End-to-end experiment steps shared by the command-line tool and the test
// suites. Every step is a pure function of (config, input files, seed);
// the only timestamp lives in the manifest files.

inline std::string resolve_path(const std::string& out_dir, const std::string& p) {
  if (p.empty()) throw ConfigError("empty path");
  if (p.front() == '/' || out_dir.empty()) return p;
  return out_dir + "/" + p;
}

inline void ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty() || out_dir == ".") return;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

namespace detail {

inline std::string manifest_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Record config hash, seed, and artifact checksums. The manifest is the one
/// rerun-variable file a command writes (it carries the timestamp).
inline void write_manifest(const std::string& path, std::uint64_t config_hash, std::uint64_t seed,
                           const std::vector<std::string>& artifact_paths) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "key\tvalue\n";
  f << "config_hash\t" << hex64(config_hash) << "\n";
  f << "seed\t" << seed << "\n";
  f << "created_at\t" << detail::manifest_timestamp() << "\n";
  for (const auto& p : artifact_paths) {
    const std::string name = std::filesystem::path(p).filename().string();
    f << "artifact:" << name << "\t" << hex64(fnv1a64(read_file_bytes(p))) << "\n";
  }
  if (!f) throw IoError("failed writing: " + path);
}

/// AUC that reports NaN instead of throwing when only one class is present
/// (tiny eval splits can lack positives for a rare task).
inline double auc_or_nan(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::int64_t pos = 0;
  for (int y : labels) pos += y;
  if (pos == 0 || pos == static_cast<std::int64_t>(labels.size())) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return auc(scores, labels);
}

// ---------------------------------------------------------------------------
// Inference

struct EvalPredictions {
  std::vector<std::vector<double>> task_probs;     // [task][i]
  std::vector<double> p_up;                        // latent model only
  std::vector<std::vector<double>> p_given_up;     // [task][i], latent model only
  std::vector<std::vector<double>> p_given_not_up; // [task][i], latent model only
};

namespace detail {

inline std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n, int parts) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (parts < 1) parts = 1;
  const std::size_t per = (n + static_cast<std::size_t>(parts) - 1) / static_cast<std::size_t>(parts);
  for (std::size_t begin = 0; begin < n; begin += per) {
    out.emplace_back(begin, std::min(n, begin + per));
  }
  return out;
}

}  // namespace detail

/// Forward the model over the given rows. With threads > 1 the rows are
/// sharded into contiguous chunks; per-row outputs do not depend on batch
/// grouping, so results are identical for any thread count.
inline EvalPredictions predict(const MtlModel<float>& model, const Dataset& ds,
                               const std::vector<std::int64_t>& rows, int batch_size,
                               int threads = 1) {
  const std::size_t n = rows.size();
  const int n_tasks = model.config().n_tasks;
  const bool latent = model.has_latent_head();
  EvalPredictions out;
  out.task_probs.assign(static_cast<std::size_t>(n_tasks), std::vector<double>(n));
  if (latent) {
    out.p_up.assign(n, 0.0);
    out.p_given_up.assign(static_cast<std::size_t>(n_tasks), std::vector<double>(n));
    out.p_given_not_up.assign(static_cast<std::size_t>(n_tasks), std::vector<double>(n));
  }
  if (n == 0) return out;
  const std::size_t bs = static_cast<std::size_t>(batch_size < 1 ? 1 : batch_size);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; i += bs) {
      const std::size_t j = std::min(end, i + bs);
      const Batch<float> batch = make_batch<float>(ds, rows, i, j);
      const ForwardResult<float> fwd = model.forward(batch);
      for (int t = 0; t < n_tasks; ++t) {
        const auto& probs = fwd.task_probs[static_cast<std::size_t>(t)]->value;
        for (std::size_t k = 0; k < j - i; ++k) {
          out.task_probs[static_cast<std::size_t>(t)][i + k] =
              static_cast<double>(probs.at(static_cast<std::int64_t>(k)));
        }
        if (latent) {
          const auto& p1 = fwd.p_given_up[static_cast<std::size_t>(t)]->value;
          const auto& p0 = fwd.p_given_not_up[static_cast<std::size_t>(t)]->value;
          for (std::size_t k = 0; k < j - i; ++k) {
            out.p_given_up[static_cast<std::size_t>(t)][i + k] =
                static_cast<double>(p1.at(static_cast<std::int64_t>(k)));
            out.p_given_not_up[static_cast<std::size_t>(t)][i + k] =
                static_cast<double>(p0.at(static_cast<std::int64_t>(k)));
          }
        }
      }
      if (latent) {
        for (std::size_t k = 0; k < j - i; ++k) {
          out.p_up[i + k] = static_cast<double>(fwd.p_up->value.at(static_cast<std::int64_t>(k)));
        }
      }
    }
  };

  if (threads <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    for (const auto& [begin, end] : detail::chunk_ranges(n, threads)) {
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

inline std::vector<DecomposedPrediction> decomposed_from_predictions(const EvalPredictions& ep) {
  if (ep.p_up.empty()) throw ModeError("model has no latent head to decompose");
  std::vector<DecomposedPrediction> out;
  out.reserve(ep.p_up.size());
  const std::size_t n_tasks = ep.p_given_up.size();
  for (std::size_t i = 0; i < ep.p_up.size(); ++i) {
    std::vector<double> p1(n_tasks), p0(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) {
      p1[t] = ep.p_given_up[t][i];
      p0[t] = ep.p_given_not_up[t][i];
    }
    out.push_back(make_decomposed(ep.p_up[i], std::move(p1), std::move(p0)));
  }
  return out;
}

/// The oracle scorer: the generating posterior as p_up and the generating
/// per-task conditionals as heads (habit masking folded into P(t|UP)).
inline std::vector<DecomposedPrediction> oracle_decomposed(const GeneratorConfig& gen,
                                                           const PreferenceModel& pref,
                                                           const Dataset& ds,
                                                           const std::vector<std::int64_t>& rows) {
  std::vector<double> p1(gen.tasks.size()), p0(gen.tasks.size());
  for (std::size_t t = 0; t < gen.tasks.size(); ++t) {
    p1[t] = (gen.habit_masking ? gen.tasks[t].habit_inclusion : 1.0) * gen.tasks[t].q_up;
    p0[t] = gen.tasks[t].q_not_up;
  }
  std::vector<DecomposedPrediction> out;
  out.reserve(rows.size());
  for (auto r : rows) {
    out.push_back(make_decomposed(true_posterior(pref, ds, r), p1, p0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct FitOptions {
  int epochs = 1;
  int batch_size = 512;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

inline FitOptions fit_options(const TrainingConfig& t) {
  FitOptions o;
  o.epochs = t.epochs;
  o.batch_size = t.batch_size;
  o.optimizer = t.optimizer;
  o.learning_rate = t.learning_rate;
  o.seed = t.seed;
  return o;
}

/// Minibatch training loop. Batch order comes from the per-epoch shuffle
/// stream of `seed`, so two models trained with the same seed see identical
/// batches. Returns per-epoch per-task mean train loss.
inline std::vector<std::vector<double>> fit(
    MtlModel<float>& model, const Dataset& ds, std::vector<std::int64_t> order,
    const FitOptions& opt,
    const std::function<void(int, const std::vector<double>&)>& on_epoch = {}) {
  if (order.empty()) throw ShapeError("fit: no training rows");
  Optimizer<float> optimizer(opt.optimizer, opt.learning_rate);
  const auto& all_params = model.store().all();
  const auto trainable = model.store().trainable();
  const std::size_t n_tasks = static_cast<std::size_t>(model.config().n_tasks);
  const std::size_t bs = static_cast<std::size_t>(opt.batch_size);

  std::vector<std::vector<double>> epoch_losses;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(opt.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    std::vector<double> loss_acc(n_tasks, 0.0);
    std::int64_t batch_index = 0;
    for (std::size_t i = 0; i < order.size(); i += bs, ++batch_index) {
      const std::size_t j = std::min(order.size(), i + bs);
      const Batch<float> batch = make_batch<float>(ds, order, i, j);
      zero_grad(all_params);
      const ForwardResult<float> fwd = model.forward(batch);
      const auto terms = model.task_loss_terms(fwd, batch);
      const NodePtr<float> loss = model.combine_losses(terms);
      if (!loss->value.all_finite()) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      backward(loss);
      optimizer.step(trainable);
      for (std::size_t t = 0; t < n_tasks; ++t) {
        loss_acc[t] += static_cast<double>(terms[t]->value.at(0)) * static_cast<double>(j - i);
      }
    }
    for (auto& v : loss_acc) v /= static_cast<double>(order.size());
    epoch_losses.push_back(loss_acc);
    if (on_epoch) on_epoch(epoch, loss_acc);
  }
  return epoch_losses;
}

// ---------------------------------------------------------------------------
// Commands

struct GenDataResult {
  std::string train_path;
  std::string sidecar_path;
  std::string manifest_path;
  std::int64_t n_rows = 0;
};

inline GenDataResult run_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (!cfg.data.has_generator) {
    throw ConfigError("gen-data needs a data.generator section");
  }
  ensure_out_dir(out_dir);
  const Generated gen = generate(cfg.data.generator, cfg.training.seed);
  GenDataResult result;
  result.train_path = resolve_path(out_dir, cfg.data.train_path);
  result.sidecar_path = resolve_path(out_dir, cfg.data.sidecar_path);
  result.manifest_path = resolve_path(out_dir, "gen_manifest.tsv");
  result.n_rows = gen.data.n_rows();
  save_tsv(gen.data, result.train_path);
  save_sidecar(gen.sidecar, result.sidecar_path);
  write_manifest(result.manifest_path, cfg.config_hash(), cfg.training.seed,
                 {result.train_path, result.sidecar_path});
  return result;
}

struct LatentMetrics {
  bool has_or = false;
  double auc_or = 0;
  bool has_true = false;
  double auc_true = 0;
};

inline LatentMetrics compute_latent_metrics(const EvalPredictions& preds, const Dataset& ds,
                                            const std::vector<std::int64_t>& rows,
                                            const Sidecar* sidecar) {
  LatentMetrics lm;
  if (preds.p_up.empty() || rows.empty()) return lm;
  lm.auc_or = auc_or_nan(preds.p_up, any_interaction_labels(ds, rows));
  lm.has_or = !std::isnan(lm.auc_or);
  if (sidecar != nullptr) {
    std::vector<int> truth;
    truth.reserve(rows.size());
    for (auto r : rows) truth.push_back(sidecar->latent_u[static_cast<std::size_t>(r)]);
    lm.auc_true = auc_or_nan(preds.p_up, truth);
    lm.has_true = !std::isnan(lm.auc_true);
  }
  return lm;
}

inline AucReport tolerant_auc_report(const std::vector<std::string>& task_names,
                                     const EvalPredictions& preds, const Dataset& ds,
                                     const std::vector<std::int64_t>& rows) {
  AucReport report;
  for (std::size_t t = 0; t < task_names.size(); ++t) {
    TaskAuc entry;
    entry.task = task_names[t];
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (auto r : rows) {
      const int y = ds.labels[t][static_cast<std::size_t>(r)] != 0 ? 1 : 0;
      labels.push_back(y);
      (y == 1 ? entry.n_pos : entry.n_neg) += 1;
    }
    entry.auc = auc_or_nan(preds.task_probs[t], labels);
    report.tasks.push_back(std::move(entry));
  }
  return report;
}

inline void save_auc_report(const AucReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "task\tauc\tn_pos\tn_neg\n";
  for (const auto& t : report.tasks) {
    f << t.task << "\t" << detail::format_double(t.auc) << "\t" << t.n_pos << "\t" << t.n_neg
      << "\n";
  }
  if (!f) throw IoError("failed writing: " + path);
}

inline AucReport load_auc_report(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty report");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "task\tauc\tn_pos\tn_neg") throw IoError(path + ": unexpected report header");
  AucReport report;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_tabs(line);
    if (cells.size() != 4) throw detail::cell_error(path, line_no, "expected 4 cells");
    TaskAuc t;
    t.task = cells[0];
    t.auc = detail::parse_number<double>(cells[1], path, line_no, "auc");
    t.n_pos = detail::parse_number<std::int64_t>(cells[2], path, line_no, "n_pos");
    t.n_neg = detail::parse_number<std::int64_t>(cells[3], path, line_no, "n_neg");
    report.tasks.push_back(std::move(t));
  }
  return report;
}

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  std::string manifest_path;
  AucReport final_auc;
  LatentMetrics final_latent;
  std::vector<std::vector<double>> epoch_losses;  // [epoch][task]
  AucReport epoch0_auc;
};

inline TrainResult run_train(const ExperimentConfig& cfg, const std::string& out_dir,
                             int threads = 1) {
  ensure_out_dir(out_dir);
  const DatasetSchema schema = cfg.dataset_schema();
  const std::string train_path = resolve_path(out_dir, cfg.data.train_path);
  const Dataset ds = load_tsv(train_path, schema);
  const SplitIndices split = split_rows(ds.n_rows(), cfg.evaluation.split_salt);
  if (split.train.empty()) throw IoError(train_path + ": no training rows after split");

  MtlModel<float> model(cfg.model, schema.features, cfg.training.seed);
  if (model.has_latent_head()) model.resolve_alpha(positive_rates(ds, split.train));

  Sidecar sidecar;
  bool have_sidecar = false;
  if (model.has_latent_head() && cfg.evaluation.latent_metrics) {
    const std::string sidecar_path = resolve_path(out_dir, cfg.data.sidecar_path);
    if (std::filesystem::exists(sidecar_path)) {
      sidecar = load_sidecar(sidecar_path);
      have_sidecar = sidecar.n_rows() == ds.n_rows();
    }
  }

  TrainResult result;
  result.checkpoint_path = resolve_path(out_dir, "checkpoint.dlen");
  result.metrics_path = resolve_path(out_dir, "train_metrics.tsv");
  result.manifest_path = resolve_path(out_dir, "train_manifest.tsv");

  std::ofstream metrics(result.metrics_path, std::ios::binary);
  if (!metrics) throw IoError("cannot open for writing: " + result.metrics_path);
  metrics << "epoch\ttask\ttrain_loss\teval_auc\tlatent_auc_or\tlatent_auc_true\n";

  auto evaluate = [&]() {
    std::pair<AucReport, LatentMetrics> out;
    if (split.eval.empty()) return out;
    const EvalPredictions preds =
        predict(model, ds, split.eval, cfg.training.batch_size, threads);
    out.first = tolerant_auc_report(cfg.model.task_names, preds, ds, split.eval);
    if (model.has_latent_head() && cfg.evaluation.latent_metrics) {
      out.second = compute_latent_metrics(preds, ds, split.eval, have_sidecar ? &sidecar : nullptr);
    }
    return out;
  };

  auto on_epoch = [&](int epoch, const std::vector<double>& losses) {
    const auto [report, lm] = evaluate();
    for (std::size_t t = 0; t < cfg.model.task_names.size(); ++t) {
      metrics << epoch << "\t" << cfg.model.task_names[t] << "\t"
              << detail::format_double(losses[t]) << "\t";
      metrics << (report.tasks.empty() ? "-" : detail::format_double(report.tasks[t].auc)) << "\t";
      metrics << (lm.has_or ? detail::format_double(lm.auc_or) : "-") << "\t";
      metrics << (lm.has_true ? detail::format_double(lm.auc_true) : "-") << "\n";
    }
    if (epoch == 0) result.epoch0_auc = report;
    result.final_auc = report;
    result.final_latent = lm;
  };

  result.epoch_losses = fit(model, ds, split.train, fit_options(cfg.training), on_epoch);
  metrics.close();

  save_checkpoint(model.store().all(), result.checkpoint_path);
  write_manifest(result.manifest_path, cfg.config_hash(), cfg.training.seed,
                 {result.checkpoint_path, result.metrics_path});
  return result;
}

struct EvalResult {
  AucReport report;
  LatentMetrics latent;
  MtlGainReport gains;
  bool has_gains = false;
  std::string report_path;
  std::string manifest_path;
};

inline EvalResult run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                           const std::string& dataset_path, const std::string& out_dir,
                           const std::string& baseline_report_path = "", int threads = 1) {
  ensure_out_dir(out_dir);
  const DatasetSchema schema = cfg.dataset_schema();
  const Dataset ds = load_tsv(dataset_path, schema);
  const SplitIndices split = split_rows(ds.n_rows(), cfg.evaluation.split_salt);
  if (split.eval.empty()) throw IoError(dataset_path + ": no eval rows after split");

  MtlModel<float> model(cfg.model, schema.features, cfg.training.seed);
  load_checkpoint(model.store().all(), checkpoint_path);

  const EvalPredictions preds = predict(model, ds, split.eval, cfg.training.batch_size, threads);
  EvalResult result;
  result.report = tolerant_auc_report(cfg.model.task_names, preds, ds, split.eval);

  if (model.has_latent_head() && cfg.evaluation.latent_metrics) {
    Sidecar sidecar;
    const Sidecar* sc = nullptr;
    const std::string sidecar_path = resolve_path(out_dir, cfg.data.sidecar_path);
    if (std::filesystem::exists(sidecar_path)) {
      sidecar = load_sidecar(sidecar_path);
      if (sidecar.n_rows() == ds.n_rows()) sc = &sidecar;
    }
    result.latent = compute_latent_metrics(preds, ds, split.eval, sc);
  }

  result.report_path = resolve_path(out_dir, "auc_report.tsv");
  result.manifest_path = resolve_path(out_dir, "eval_manifest.tsv");
  save_auc_report(result.report, result.report_path);
  std::vector<std::string> artifacts{result.report_path};

  if (result.latent.has_or || result.latent.has_true) {
    std::vector<MetricRow> rows;
    if (result.latent.has_or) rows.push_back({"latent", "auc_vs_any_interaction", result.latent.auc_or});
    if (result.latent.has_true) rows.push_back({"latent", "auc_vs_latent_truth", result.latent.auc_true});
    const std::string latent_path = resolve_path(out_dir, "latent_report.tsv");
    write_metrics_tsv(rows, latent_path);
    artifacts.push_back(latent_path);
  }

  if (!baseline_report_path.empty()) {
    const AucReport baseline = load_auc_report(baseline_report_path);
    result.gains = mtl_gain(result.report, baseline);
    result.has_gains = true;
    const std::string gains_path = resolve_path(out_dir, "gains.tsv");
    std::ofstream g(gains_path, std::ios::binary);
    if (!g) throw IoError("cannot open for writing: " + gains_path);
    g << "task\tmodel_auc\tbaseline_auc\tgain\n";
    for (const auto& t : result.gains.tasks) {
      g << t.task << "\t" << detail::format_double(t.model_auc) << "\t"
        << detail::format_double(t.baseline_auc) << "\t" << detail::format_double(t.gain) << "\n";
    }
    if (!g) throw IoError("failed writing: " + gains_path);
    artifacts.push_back(gains_path);
  }

  write_manifest(result.manifest_path, cfg.config_hash(), cfg.training.seed, artifacts);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient checking

inline ModelConfig tiny_model_config(ModelKind kind) {
  ModelConfig m;
  m.kind = kind;
  m.n_tasks = 2;
  m.task_names = {"t0", "t1"};
  m.n_shared_experts = 2;
  m.n_task_experts = 1;
  m.expert_spec.layer_widths = {8, 4};
  m.tower_spec.layer_widths = {4};
  m.hidden_state_spec.layer_widths = {8, 4};
  m.alpha_policy.mode = AlphaMode::Fixed;
  m.alpha_policy.fixed_alphas = {0.04, 0.08};
  return m;
}

inline FeatureSchema tiny_feature_schema() {
  FeatureSchema s;
  s.categorical_fields = {{"f0", 5, 3}};
  s.numeric_fields = {"n0", "n1"};
  return s;
}

template <typename T>
Batch<T> tiny_random_batch(const FeatureSchema& schema, int n_tasks, std::uint64_t seed,
                           std::int64_t size = 16) {
  Batch<T> b;
  b.size = size;
  Rng rng = Rng::stream(seed, "gradcheck.batch");
  for (const auto& f : schema.categorical_fields) {
    std::vector<std::int32_t> ids;
    for (std::int64_t i = 0; i < size; ++i) {
      ids.push_back(static_cast<std::int32_t>(
          rng.uniform_int(static_cast<std::uint64_t>(f.vocab_size))));
    }
    b.cat.push_back(std::move(ids));
  }
  for (std::size_t f = 0; f < schema.numeric_fields.size(); ++f) {
    std::vector<T> vals;
    for (std::int64_t i = 0; i < size; ++i) vals.push_back(static_cast<T>(rng.normal()));
    b.num.push_back(std::move(vals));
  }
  for (int t = 0; t < n_tasks; ++t) {
    Tensor<T> labels({size});
    for (std::int64_t i = 0; i < size; ++i) labels.at(i) = rng.bernoulli(0.4) ? T(1) : T(0);
    b.labels.push_back(std::move(labels));
  }
  b.row_indices.resize(static_cast<std::size_t>(size), 0);
  return b;
}

/// Central-difference check of a tiny model of the given kind; runs with
/// 64-bit values so the differences resolve well below the pass threshold.
inline GradCheckReport run_gradcheck_once(ModelKind kind, std::uint64_t seed) {
  const ModelConfig config = tiny_model_config(kind);
  const FeatureSchema schema = tiny_feature_schema();
  MtlModel<double> model(config, schema, seed);
  const Batch<double> batch = tiny_random_batch<double>(schema, config.n_tasks, seed);
  auto builder = [&]() { return model.loss(model.forward(batch), batch); };
  return grad_check<double>(builder, model.store().all());
}

inline constexpr double kGradCheckThreshold = 1e-3;

struct GradCheckOutcome {
  std::vector<std::uint64_t> seeds;
  std::vector<GradCheckReport> reports;
  bool passed = false;
};

inline GradCheckOutcome run_gradcheck(ModelKind kind, std::uint64_t base_seed, int n_seeds = 5) {
  GradCheckOutcome outcome;
  outcome.passed = true;
  for (int i = 0; i < n_seeds; ++i) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    outcome.seeds.push_back(seed);
    outcome.reports.push_back(run_gradcheck_once(kind, seed));
    if (outcome.reports.back().max_rel_error >= kGradCheckThreshold) outcome.passed = false;
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchCell {
  std::vector<double> per_seed_auc;
  double mean_auc = 0;
  double std_auc = 0;
  double mean_gain = 0;  // vs the first (baseline) model
  double std_gain = 0;
};

struct BenchResult {
  std::vector<ModelKind> kinds{ModelKind::MMOE, ModelKind::CGC, ModelKind::DLEN};
  std::vector<std::string> task_names;
  std::vector<std::vector<BenchCell>> cells;  // [kind][task]
  std::vector<double> latent_auc_true;        // per seed, trained latent vs hidden truth
  std::vector<double> latent_auc_or;          // per seed, trained latent vs OR proxy
  std::vector<double> bayes_auc;              // per seed, oracle posterior vs hidden truth
  std::string report_path;
  std::string seeds_path;
  std::string manifest_path;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace detail

/// Train all architectures on identical generated data and batch order per
/// seed, then compare per-task AUC and gains against the first (baseline)
/// architecture.
inline BenchResult run_bench(const ExperimentConfig& cfg, const std::string& out_dir,
                             int threads = 1) {
  if (!cfg.data.has_generator) throw ConfigError("bench needs a data.generator section");
  ensure_out_dir(out_dir);

  BenchResult result;
  result.task_names = cfg.model.task_names;
  const std::size_t n_tasks = result.task_names.size();
  const std::size_t n_kinds = result.kinds.size();
  result.cells.assign(n_kinds, std::vector<BenchCell>(n_tasks));

  std::ofstream seeds_file;
  result.seeds_path = resolve_path(out_dir, "bench_seeds.tsv");
  seeds_file.open(result.seeds_path, std::ios::binary);
  if (!seeds_file) throw IoError("cannot open for writing: " + result.seeds_path);
  seeds_file << "seed\tmodel\tmetric\tvalue\n";

  for (const std::uint64_t seed : cfg.bench.seeds) {
    const Generated gen = generate(cfg.data.generator, seed);
    const Dataset& ds = gen.data;
    const SplitIndices split = split_rows(ds.n_rows(), cfg.evaluation.split_salt);
    const std::vector<double> rates = positive_rates(ds, split.train);

    FitOptions opt = fit_options(cfg.training);
    opt.seed = seed;

    for (std::size_t k = 0; k < n_kinds; ++k) {
      ModelConfig mc = cfg.model;
      mc.kind = result.kinds[k];
      MtlModel<float> model(mc, ds.schema.features, seed);
      if (model.has_latent_head()) model.resolve_alpha(rates);
      fit(model, ds, split.train, opt);
      const EvalPredictions preds = predict(model, ds, split.eval, opt.batch_size, threads);
      for (std::size_t t = 0; t < n_tasks; ++t) {
        std::vector<int> labels;
        labels.reserve(split.eval.size());
        for (auto r : split.eval) {
          labels.push_back(ds.labels[t][static_cast<std::size_t>(r)] != 0 ? 1 : 0);
        }
        const double task_auc = auc_or_nan(preds.task_probs[t], labels);
        result.cells[k][t].per_seed_auc.push_back(task_auc);
        seeds_file << seed << "\t" << to_string(result.kinds[k]) << "\tauc:" << result.task_names[t]
                   << "\t" << detail::format_double(task_auc) << "\n";
      }
      if (model.has_latent_head()) {
        const LatentMetrics lm = compute_latent_metrics(preds, ds, split.eval, &gen.sidecar);
        result.latent_auc_or.push_back(lm.auc_or);
        result.latent_auc_true.push_back(lm.auc_true);
        seeds_file << seed << "\t" << to_string(result.kinds[k]) << "\tlatent_auc_or\t"
                   << detail::format_double(lm.auc_or) << "\n";
        seeds_file << seed << "\t" << to_string(result.kinds[k]) << "\tlatent_auc_true\t"
                   << detail::format_double(lm.auc_true) << "\n";
      }
    }

    // Bayes-optimal reference: the generating posterior scored on the same rows.
    {
      std::vector<double> posterior;
      std::vector<int> truth;
      posterior.reserve(split.eval.size());
      truth.reserve(split.eval.size());
      for (auto r : split.eval) {
        posterior.push_back(gen.sidecar.true_posterior[static_cast<std::size_t>(r)]);
        truth.push_back(gen.sidecar.latent_u[static_cast<std::size_t>(r)]);
      }
      const double bayes = auc_or_nan(posterior, truth);
      result.bayes_auc.push_back(bayes);
      seeds_file << seed << "\toracle\tbayes_auc\t" << detail::format_double(bayes) << "\n";
    }
  }
  seeds_file.close();

  for (std::size_t k = 0; k < n_kinds; ++k) {
    for (std::size_t t = 0; t < n_tasks; ++t) {
      auto& cell = result.cells[k][t];
      const auto [mean, sd] = detail::mean_std(cell.per_seed_auc);
      cell.mean_auc = mean;
      cell.std_auc = sd;
      std::vector<double> gains;
      for (std::size_t s = 0; s < cell.per_seed_auc.size(); ++s) {
        gains.push_back(cell.per_seed_auc[s] - result.cells[0][t].per_seed_auc[s]);
      }
      const auto [gmean, gsd] = detail::mean_std(gains);
      cell.mean_gain = gmean;
      cell.std_gain = gsd;
    }
  }

  result.report_path = resolve_path(out_dir, "bench_report.tsv");
  std::ofstream report(result.report_path, std::ios::binary);
  if (!report) throw IoError("cannot open for writing: " + result.report_path);
  report << "model\ttask\tmean_auc\tstd_auc\tmean_gain_vs_" << to_string(result.kinds[0])
         << "\tstd_gain\n";
  for (std::size_t k = 0; k < n_kinds; ++k) {
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const auto& cell = result.cells[k][t];
      report << to_string(result.kinds[k]) << "\t" << result.task_names[t] << "\t"
             << detail::format_double(cell.mean_auc) << "\t" << detail::format_double(cell.std_auc)
             << "\t" << detail::format_double(cell.mean_gain) << "\t"
             << detail::format_double(cell.std_gain) << "\n";
    }
  }
  const auto [lt_mean, lt_sd] = detail::mean_std(result.latent_auc_true);
  const auto [lo_mean, lo_sd] = detail::mean_std(result.latent_auc_or);
  const auto [by_mean, by_sd] = detail::mean_std(result.bayes_auc);
  report << "dlen\tlatent_vs_truth\t" << detail::format_double(lt_mean) << "\t"
         << detail::format_double(lt_sd) << "\t-\t-\n";
  report << "dlen\tlatent_vs_any_interaction\t" << detail::format_double(lo_mean) << "\t"
         << detail::format_double(lo_sd) << "\t-\t-\n";
  report << "oracle\tbayes_vs_truth\t" << detail::format_double(by_mean) << "\t"
         << detail::format_double(by_sd) << "\t-\t-\n";
  if (!report) throw IoError("failed writing: " + result.report_path);
  report.close();

  result.manifest_path = resolve_path(out_dir, "bench_manifest.tsv");
  write_manifest(result.manifest_path, cfg.config_hash(), cfg.training.seed,
                 {result.report_path, result.seeds_path});
  return result;
}

// ---------------------------------------------------------------------------
// Ranking simulation

struct RankSimResult {
  SimEvalReport latent;
  SimEvalReport composed;
  std::string report_path;
  std::string manifest_path;
};

inline RankSimResult run_rank_sim(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                                  const std::string& out_dir, bool per_set_detail = false,
                                  int threads = 1) {
  if (cfg.model.kind != ModelKind::DLEN) {
    throw ModeError("rank-sim latent fusion needs a latent-state model, got " +
                    to_string(cfg.model.kind));
  }
  if (!cfg.data.has_generator) {
    throw ConfigError("rank-sim needs a data.generator section for ground-truth rates");
  }
  ensure_out_dir(out_dir);
  const DatasetSchema schema = cfg.dataset_schema();
  const Dataset ds = load_tsv(resolve_path(out_dir, cfg.data.train_path), schema);
  const std::string sidecar_path = resolve_path(out_dir, cfg.data.sidecar_path);
  if (!std::filesystem::exists(sidecar_path)) {
    throw IoError("rank-sim needs the ground-truth sidecar: " + sidecar_path);
  }
  const Sidecar sidecar = load_sidecar(sidecar_path);
  if (sidecar.n_rows() != ds.n_rows()) {
    throw IoError(sidecar_path + ": row count does not match dataset");
  }

  MtlModel<float> model(cfg.model, schema.features, cfg.training.seed);
  load_checkpoint(model.store().all(), checkpoint_path);

  const SplitIndices split = split_rows(ds.n_rows(), cfg.evaluation.split_salt);
  const EvalPredictions preds = predict(model, ds, split.eval, cfg.training.batch_size, threads);

  SimCandidates candidates;
  candidates.preds = decomposed_from_predictions(preds);
  candidates.latent_u.reserve(split.eval.size());
  candidates.expected_interactions.reserve(split.eval.size());
  for (auto r : split.eval) {
    const int u = sidecar.latent_u[static_cast<std::size_t>(r)];
    candidates.latent_u.push_back(u);
    candidates.expected_interactions.push_back(
        expected_interactions_given_u(cfg.data.generator, u));
  }

  RankSimResult result;
  result.latent = sim_eval(candidates, cfg.fusion_weights(FusionMode::Latent),
                           cfg.fusion.impression_size, cfg.fusion.top_k);
  result.composed = sim_eval(candidates, cfg.fusion_weights(FusionMode::Composed),
                             cfg.fusion.impression_size, cfg.fusion.top_k);

  result.report_path = resolve_path(out_dir, "rank_sim_report.tsv");
  std::ofstream report(result.report_path, std::ios::binary);
  if (!report) throw IoError("cannot open for writing: " + result.report_path);
  report << "mode\tk\tdetest_fraction\texpected_interactions\tn_sets\n";
  for (const auto* r : {&result.latent, &result.composed}) {
    report << (r == &result.latent ? "latent" : "composed") << "\t" << r->k << "\t"
           << detail::format_double(r->detest_fraction) << "\t"
           << detail::format_double(r->expected_interactions) << "\t" << r->n_sets << "\n";
  }
  if (!report) throw IoError("failed writing: " + result.report_path);
  report.close();
  std::vector<std::string> artifacts{result.report_path};

  if (per_set_detail) {
    const std::string detail_path = resolve_path(out_dir, "rank_sim_sets.tsv");
    std::ofstream det(detail_path, std::ios::binary);
    if (!det) throw IoError("cannot open for writing: " + detail_path);
    det << "mode\tset\tdetest_fraction\texpected_interactions\n";
    for (const auto* r : {&result.latent, &result.composed}) {
      const std::string mode = r == &result.latent ? "latent" : "composed";
      for (std::size_t s = 0; s < r->per_set_detest.size(); ++s) {
        det << mode << "\t" << s << "\t" << detail::format_double(r->per_set_detest[s]) << "\t"
            << detail::format_double(r->per_set_expected[s]) << "\n";
      }
    }
    if (!det) throw IoError("failed writing: " + detail_path);
    artifacts.push_back(detail_path);
  }

  result.manifest_path = resolve_path(out_dir, "rank_sim_manifest.tsv");
  write_manifest(result.manifest_path, cfg.config_hash(), cfg.training.seed, artifacts);
  return result;
}

}  // namespace dlen
