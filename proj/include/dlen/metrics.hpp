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

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dlen/common.hpp"
#include "dlen/data.hpp"

namespace dlen {

/// Rank-statistic AUC (Mann-Whitney): sort once, give tied scores their
/// average rank, then (sum of positive ranks - P(P+1)/2) / (P*N).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: score/label count mismatch");
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw NumericError("auc: label outside {0,1}");
    n_pos += y;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw NumericError("auc undefined: need both classes, got " + std::to_string(n_pos) +
                       " positives / " + std::to_string(n_neg) + " negatives");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // ranks are 1-based; the tied block [i, j] shares the average rank
    const double avg_rank = static_cast<double>(i + 1 + j + 1) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(n_pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

struct TaskAuc {
  std::string task;
  double auc = 0;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
};

struct AucReport {
  std::vector<TaskAuc> tasks;

  const TaskAuc& find(const std::string& task) const {
    for (const auto& t : tasks) {
      if (t.task == task) return t;
    }
    throw Error("no AUC entry for task '" + task + "'");
  }
};

inline AucReport auc_report(const std::vector<std::string>& task_names,
                            const std::vector<std::vector<double>>& scores,
                            const std::vector<std::vector<int>>& labels) {
  if (scores.size() != task_names.size() || labels.size() != task_names.size()) {
    throw ShapeError("auc_report: per-task arrays must match task count");
  }
  AucReport report;
  for (std::size_t t = 0; t < task_names.size(); ++t) {
    TaskAuc entry;
    entry.task = task_names[t];
    entry.auc = auc(scores[t], labels[t]);
    for (int y : labels[t]) (y == 1 ? entry.n_pos : entry.n_neg) += 1;
    report.tasks.push_back(std::move(entry));
  }
  return report;
}

struct TaskGain {
  std::string task;
  double model_auc = 0;
  double baseline_auc = 0;
  double gain = 0;
};

struct MtlGainReport {
  std::vector<TaskGain> tasks;
};

/// Per-task AUC difference against a baseline report (same task set).
inline MtlGainReport mtl_gain(const AucReport& model, const AucReport& baseline) {
  if (model.tasks.size() != baseline.tasks.size()) {
    throw Error("mtl_gain: reports cover different task counts");
  }
  MtlGainReport out;
  for (const auto& m : model.tasks) {
    const auto& b = baseline.find(m.task);
    out.tasks.push_back({m.task, m.auc, b.auc, m.auc - b.auc});
  }
  return out;
}

/// Logical OR of a sample's task labels: did the user interact at all.
inline int any_interaction(const std::vector<int>& task_labels) {
  for (int y : task_labels) {
    if (y != 0 && y != 1) throw NumericError("any_interaction: label outside {0,1}");
    if (y == 1) return 1;
  }
  return 0;
}

/// OR labels for the given dataset rows.
inline std::vector<int> any_interaction_labels(const Dataset& ds,
                                               const std::vector<std::int64_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) {
    int y = 0;
    for (const auto& col : ds.labels) y |= col[static_cast<std::size_t>(r)] != 0 ? 1 : 0;
    out.push_back(y);
  }
  return out;
}

/// AUC of latent-state scores against the any-interaction proxy label. A
/// qualitative convergence check: interaction implies preference but not the
/// reverse, so this is necessary, not sufficient.
inline double latent_auc(const std::vector<double>& p_up_scores, const Dataset& ds,
                         const std::vector<std::int64_t>& rows) {
  if (p_up_scores.size() != rows.size()) throw ShapeError("latent_auc: score/row count mismatch");
  return auc(p_up_scores, any_interaction_labels(ds, rows));
}

/// Flat (section, key, value) metric rows, written as TSV.
struct MetricRow {
  std::string section;
  std::string key;
  double value = 0;
};

inline void write_metrics_tsv(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "section\tkey\tvalue\n";
  for (const auto& r : rows) {
    f << r.section << "\t" << r.key << "\t" << detail::format_double(r.value) << "\n";
  }
  if (!f) throw IoError("failed writing: " + path);
}

}  // namespace dlen
