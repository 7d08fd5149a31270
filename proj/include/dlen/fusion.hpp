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
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dlen/bayes.hpp"

namespace dlen {

enum class FusionMode { Latent, Composed };

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "latent") return FusionMode::Latent;
  if (s == "composed") return FusionMode::Composed;
  throw ConfigError("unknown fusion mode '" + s + "' (expected latent or composed)");
}

/// Multi-target fusion. Latent mode scores p_up^gamma * sum_t w_t * P(t|UP),
/// which reduces to the joint prefer-and-interact score for a single task at
/// gamma=1; composed mode ignores the latent state and scores
/// sum_t w_t * P(t).
struct FusionWeights {
  std::vector<double> task_weights;
  double gamma = 1.0;
  FusionMode mode = FusionMode::Latent;

  void validate() const {
    if (task_weights.empty()) throw ConfigError("fusion needs at least one task weight");
    double sum = 0;
    for (double w : task_weights) {
      if (w < 0) throw ConfigError("fusion task weights must be non-negative");
      sum += w;
    }
    if (sum <= 0) throw ConfigError("fusion needs at least one nonzero task weight");
    if (gamma < 0) throw ConfigError("fusion gamma must be non-negative");
  }
};

inline double fuse(const DecomposedPrediction& pred, const FusionWeights& weights) {
  if (weights.task_weights.size() != pred.n_tasks()) {
    throw ShapeError("fuse: " + std::to_string(weights.task_weights.size()) + " weights vs " +
                     std::to_string(pred.n_tasks()) + " tasks");
  }
  double acc = 0;
  if (weights.mode == FusionMode::Latent) {
    for (std::size_t t = 0; t < pred.n_tasks(); ++t) {
      acc += weights.task_weights[t] * pred.p_given_up[t];
    }
    return std::pow(pred.p_up, weights.gamma) * acc;
  }
  for (std::size_t t = 0; t < pred.n_tasks(); ++t) {
    acc += weights.task_weights[t] * pred.composed[t];
  }
  return acc;
}

struct RankedItem {
  std::int64_t index = 0;
  double score = 0;
};

/// Scores non-increasing; ties broken by ascending candidate index.
struct RankedList {
  std::vector<RankedItem> items;
  std::int64_t k = 0;
};

inline RankedList rank_topk(const std::vector<DecomposedPrediction>& candidates,
                            const FusionWeights& weights, std::int64_t k) {
  weights.validate();
  if (k < 0 || k > static_cast<std::int64_t>(candidates.size())) {
    throw ConfigError("rank_topk: k=" + std::to_string(k) + " outside [0, " +
                      std::to_string(candidates.size()) + "]");
  }
  RankedList out;
  out.k = k;
  if (k == 0) return out;
  std::vector<RankedItem> scored(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scored[i] = {static_cast<std::int64_t>(i), fuse(candidates[i], weights)};
  }
  std::sort(scored.begin(), scored.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  scored.resize(static_cast<std::size_t>(k));
  out.items = std::move(scored);
  return out;
}

/// One candidate pool for the ranking simulation: model (or oracle) outputs
/// joined with sidecar ground truth, in dataset row order.
struct SimCandidates {
  std::vector<DecomposedPrediction> preds;
  std::vector<int> latent_u;
  std::vector<double> expected_interactions;  // ground-truth per candidate
};

struct SimEvalReport {
  double detest_fraction = 0;        // mean top-k fraction with latent_u = 0
  double expected_interactions = 0;  // mean top-k sum of expected interactions
  std::int64_t n_sets = 0;
  std::int64_t m = 0;
  std::int64_t k = 0;
  std::vector<double> per_set_detest;
  std::vector<double> per_set_expected;
};

/// Group consecutive candidates into impression sets of size m, rank each,
/// and average what the top k exposes. Trailing partial sets are dropped.
inline SimEvalReport sim_eval(const SimCandidates& candidates, const FusionWeights& weights,
                              std::int64_t m, std::int64_t k) {
  if (candidates.preds.size() != candidates.latent_u.size() ||
      candidates.preds.size() != candidates.expected_interactions.size()) {
    throw ShapeError("sim_eval: candidate arrays differ in length");
  }
  if (m < 1 || k < 1 || k > m) {
    throw ConfigError("sim_eval: need 1 <= k <= m, got k=" + std::to_string(k) +
                      ", m=" + std::to_string(m));
  }
  const std::int64_t n_sets = static_cast<std::int64_t>(candidates.preds.size()) / m;
  if (n_sets == 0) {
    throw ConfigError("sim_eval: fewer than m=" + std::to_string(m) + " candidates");
  }
  SimEvalReport report;
  report.n_sets = n_sets;
  report.m = m;
  report.k = k;
  for (std::int64_t s = 0; s < n_sets; ++s) {
    const std::size_t base = static_cast<std::size_t>(s * m);
    std::vector<DecomposedPrediction> pool(candidates.preds.begin() + base,
                                           candidates.preds.begin() + base + m);
    const RankedList ranked = rank_topk(pool, weights, k);
    std::int64_t detest = 0;
    double expected = 0;
    for (const auto& item : ranked.items) {
      const std::size_t row = base + static_cast<std::size_t>(item.index);
      detest += candidates.latent_u[row] == 0 ? 1 : 0;
      expected += candidates.expected_interactions[row];
    }
    report.per_set_detest.push_back(static_cast<double>(detest) / static_cast<double>(k));
    report.per_set_expected.push_back(expected);
    report.detest_fraction += report.per_set_detest.back();
    report.expected_interactions += expected;
  }
  report.detest_fraction /= static_cast<double>(n_sets);
  report.expected_interactions /= static_cast<double>(n_sets);
  return report;
}

}  // namespace dlen
