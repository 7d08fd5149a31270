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

#include "dlen/common.hpp"
#include "dlen/graph.hpp"

namespace dlen {

// Probability algebra of the latent-preference decomposition. Each task's
// observed probability is rebuilt from a per-sample latent state UP by total
// probability:
//
//   P(t) = P(t|UP) * P(UP) + P(t|not UP) * (1 - P(UP))
//
// P(not UP) is never stored; everywhere it is literally 1 - p_up.

inline double compose_task_probability(double p_given_up, double p_up, double p_given_not_up) {
  if (p_given_up < 0 || p_given_up > 1 || p_up < 0 || p_up > 1 || p_given_not_up < 0 ||
      p_given_not_up > 1) {
    throw NumericError("compose_task_probability: argument outside [0,1]");
  }
  return p_given_up * p_up + p_given_not_up * (1.0 - p_up);
}

/// Complement-side expansion: P(not t) rebuilt the same way. Together with
/// compose_task_probability it sums to 1 (algebraic identity).
inline double compose_negative_expansion(double p_given_up, double p_up, double p_given_not_up) {
  if (p_given_up < 0 || p_given_up > 1 || p_up < 0 || p_up > 1 || p_given_not_up < 0 ||
      p_given_not_up > 1) {
    throw NumericError("compose_negative_expansion: argument outside [0,1]");
  }
  return (1.0 - p_given_up) * p_up + (1.0 - p_given_not_up) * (1.0 - p_up);
}

/// Joint prefer-and-interact score P(t, UP) = P(t|UP) * P(UP).
inline double joint_prefer_score(double p_given_up, double p_up) {
  return p_given_up * p_up;
}

enum class AlphaMode { Fixed, RateScaled };

/// Per-task cap on P(t|not UP). Fixed mode supplies the caps directly;
/// RateScaled derives them as multiplier * empirical positive rate, with the
/// multiplier restricted to [0.1, 0.5] of the task's scale.
struct AlphaPolicy {
  AlphaMode mode = AlphaMode::RateScaled;
  std::vector<double> fixed_alphas;     // Fixed: one per task
  double multiplier = 0.5;              // RateScaled
  std::vector<double> task_base_rates;  // RateScaled: one per task

  double alpha_for_task(std::size_t task) const {
    double a = 0;
    switch (mode) {
      case AlphaMode::Fixed:
        if (task >= fixed_alphas.size()) {
          throw ConfigError("alpha policy has no fixed alpha for task index " +
                            std::to_string(task));
        }
        a = fixed_alphas[task];
        break;
      case AlphaMode::RateScaled: {
        if (multiplier < 0.1 || multiplier > 0.5) {
          throw ConfigError("alpha multiplier must be in [0.1, 0.5], got " +
                            std::to_string(multiplier));
        }
        if (task >= task_base_rates.size()) {
          throw ConfigError("alpha policy has no base rate for task index " +
                            std::to_string(task));
        }
        const double rate = task_base_rates[task];
        if (rate <= 0 || rate >= 1) {
          throw ConfigError("degenerate task: base rate must be in (0,1), got " +
                            std::to_string(rate));
        }
        a = multiplier * rate;
        break;
      }
    }
    if (a <= 0 || a >= 1) {
      throw ConfigError("resolved alpha must be in (0,1), got " + std::to_string(a));
    }
    return a;
  }

  std::vector<double> resolve(std::size_t n_tasks) const {
    std::vector<double> out(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) out[t] = alpha_for_task(t);
    return out;
  }
};

inline double alpha_for_task(const AlphaPolicy& policy, std::size_t task) {
  return policy.alpha_for_task(task);
}

/// One sample's decomposed outputs across all tasks.
struct DecomposedPrediction {
  double p_up = 0;
  std::vector<double> p_given_up;
  std::vector<double> p_given_not_up;
  std::vector<double> composed;
  std::vector<double> joint_prefer;

  std::size_t n_tasks() const { return p_given_up.size(); }
};

inline DecomposedPrediction make_decomposed(double p_up, std::vector<double> p_given_up,
                                            std::vector<double> p_given_not_up) {
  if (p_up <= 0 || p_up >= 1) {
    throw NumericError("make_decomposed: p_up must be strictly inside (0,1)");
  }
  if (p_given_up.size() != p_given_not_up.size()) {
    throw ShapeError("make_decomposed: per-task vectors differ in length");
  }
  DecomposedPrediction d;
  d.p_up = p_up;
  d.p_given_up = std::move(p_given_up);
  d.p_given_not_up = std::move(p_given_not_up);
  d.composed.resize(d.p_given_up.size());
  d.joint_prefer.resize(d.p_given_up.size());
  for (std::size_t t = 0; t < d.p_given_up.size(); ++t) {
    d.composed[t] = compose_task_probability(d.p_given_up[t], p_up, d.p_given_not_up[t]);
    d.joint_prefer[t] = joint_prefer_score(d.p_given_up[t], p_up);
  }
  return d;
}

/// Sum over tasks of mean BCE(composed_t, label_t). The latent state carries
/// no loss term of its own; it is trained only through the composition.
/// labels[i][t] is the {0,1} label of sample i on task t.
inline double dlen_loss(const std::vector<DecomposedPrediction>& preds,
                        const std::vector<std::vector<double>>& labels,
                        const std::vector<double>& task_weights = {}) {
  if (preds.empty()) throw ShapeError("dlen_loss: empty batch");
  if (labels.size() != preds.size()) {
    throw ShapeError("dlen_loss: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " label rows");
  }
  const std::size_t n_tasks = preds[0].n_tasks();
  std::vector<double> weights = task_weights;
  if (weights.empty()) weights.assign(n_tasks, 1.0);
  if (weights.size() != n_tasks) throw ShapeError("dlen_loss: task weight count mismatch");

  double total = 0;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    double acc = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (labels[i].size() != n_tasks) {
        throw ShapeError("dlen_loss: sample " + std::to_string(i) + " missing a task label");
      }
      const double y = labels[i][t];
      if (y != 0.0 && y != 1.0) {
        throw NumericError("dlen_loss: label outside {0,1}");
      }
      const double p = std::clamp(preds[i].composed[t], kBceEps, 1.0 - kBceEps);
      acc += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    total += weights[t] * acc / static_cast<double>(preds.size());
  }
  return total;
}

/// Closed-form per-sample derivative of each task's BCE term with respect to
/// p_up. In the regime p_given_up > p_given_not_up a positive label pulls
/// p_up upward (negative derivative) and a negative label pushes it down.
struct GameGradientSample {
  std::vector<double> per_task;  // d BCE_t / d p_up for this sample
  double net = 0;                // sum over tasks
};

inline std::vector<GameGradientSample> game_gradient_diagnostic(
    const std::vector<DecomposedPrediction>& preds, const std::vector<std::vector<double>>& labels) {
  if (labels.size() != preds.size()) {
    throw ShapeError("game_gradient_diagnostic: prediction/label count mismatch");
  }
  std::vector<GameGradientSample> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& d = preds[i];
    if (labels[i].size() != d.n_tasks()) {
      throw ShapeError("game_gradient_diagnostic: sample " + std::to_string(i) +
                       " missing a task label");
    }
    out[i].per_task.resize(d.n_tasks());
    for (std::size_t t = 0; t < d.n_tasks(); ++t) {
      const double spread = d.p_given_up[t] - d.p_given_not_up[t];
      const double p = std::clamp(d.composed[t], kBceEps, 1.0 - kBceEps);
      const double g = labels[i][t] == 1.0 ? -spread / p : spread / (1.0 - p);
      out[i].per_task[t] = g;
      out[i].net += g;
    }
  }
  return out;
}

}  // namespace dlen
