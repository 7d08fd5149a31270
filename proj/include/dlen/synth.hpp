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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dlen/data.hpp"
#include "dlen/rng.hpp"

namespace dlen {

// Generative model of feed impressions with an explicit hidden preference
// bit u per sample:
//
//   features x  ~ uniform categorical ids + standard-normal numerics
//   u           ~ Bernoulli(p_u(x)), p_u logistic in x with one interaction term
//   label_t     ~ u=1: habit-masked Bernoulli(q_up_t)
//                 u=0: Bernoulli(q_not_up_t), with q_not_up_t << q_up_t
//
// The habit mask drops each task with probability 1 - habit_inclusion, so a
// preferring user expresses through a subset of behaviors and may emit no
// positive at all. u goes to the sidecar only, never the training file.

struct GenTask {
  std::string name;
  double q_up = 0.5;
  double q_not_up = 0.01;
  double habit_inclusion = 0.6;
};

struct GeneratorConfig {
  std::int64_t n_samples = 100000;
  std::vector<CategoricalField> categorical_fields;
  std::vector<std::string> numeric_fields;
  std::vector<GenTask> tasks;
  double preference_bias = -1.3;
  double cat_weight_std = 0.8;
  double num_weight_std = 0.5;
  double interaction_weight = 0.8;  // on the product of the first two numerics
  bool habit_masking = true;

  void validate() const {
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
    if (tasks.empty()) throw ConfigError("generator needs at least one task");
    for (const auto& t : tasks) {
      if (t.name.empty()) throw ConfigError("generator task with empty name");
      if (t.q_up < 0 || t.q_up > 1 || t.q_not_up < 0 || t.q_not_up > 1) {
        throw ConfigError("task " + t.name + ": rates must be in [0,1]");
      }
      if (t.q_not_up >= t.q_up) {
        throw ConfigError("task " + t.name + ": q_not_up must be strictly below q_up");
      }
      if (t.habit_inclusion <= 0 || t.habit_inclusion > 1) {
        throw ConfigError("task " + t.name + ": habit_inclusion must be in (0,1]");
      }
    }
    dataset_schema().validate();
  }

  DatasetSchema dataset_schema() const {
    DatasetSchema s;
    for (const auto& t : tasks) s.task_names.push_back(t.name);
    s.features.categorical_fields = categorical_fields;
    s.features.numeric_fields = numeric_fields;
    return s;
  }
};

/// The hidden logistic preference function. Rebuilt deterministically from
/// (config, seed), so it doubles as the oracle for the Bayes-optimal scores.
struct PreferenceModel {
  double bias = 0;
  std::vector<std::vector<double>> cat_weights;  // [field][id]
  std::vector<double> num_weights;               // [field]
  double interaction_weight = 0;                 // numerics[0] * numerics[1]

  double logit(const std::vector<std::int32_t>& cat_ids, const std::vector<double>& nums) const {
    double z = bias;
    for (std::size_t f = 0; f < cat_weights.size(); ++f) {
      z += cat_weights[f][static_cast<std::size_t>(cat_ids[f])];
    }
    for (std::size_t f = 0; f < num_weights.size(); ++f) z += num_weights[f] * nums[f];
    if (nums.size() >= 2) z += interaction_weight * nums[0] * nums[1];
    return z;
  }

  double posterior(const std::vector<std::int32_t>& cat_ids, const std::vector<double>& nums) const {
    const double z = logit(cat_ids, nums);
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
};

inline PreferenceModel build_preference_model(const GeneratorConfig& cfg, std::uint64_t seed) {
  PreferenceModel m;
  m.bias = cfg.preference_bias;
  m.interaction_weight = cfg.interaction_weight;
  Rng rng = Rng::stream(seed, "gen.weights");
  for (const auto& f : cfg.categorical_fields) {
    std::vector<double> w(static_cast<std::size_t>(f.vocab_size));
    for (auto& v : w) v = rng.normal(0.0, cfg.cat_weight_std);
    m.cat_weights.push_back(std::move(w));
  }
  for (std::size_t f = 0; f < cfg.numeric_fields.size(); ++f) {
    m.num_weights.push_back(rng.normal(0.0, cfg.num_weight_std));
  }
  return m;
}

struct Generated {
  Dataset data;
  Sidecar sidecar;
};

/// Draw the full dataset. Every sample uses its own index-derived stream, so
/// generation can be sharded by index range without changing any output.
inline Generated generate(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const PreferenceModel pref = build_preference_model(cfg, seed);
  const std::size_t n_cat = cfg.categorical_fields.size();
  const std::size_t n_num = cfg.numeric_fields.size();
  const std::size_t n_tasks = cfg.tasks.size();

  Generated out;
  out.data.schema = cfg.dataset_schema();
  out.data.labels.resize(n_tasks);
  out.data.cat.resize(n_cat);
  out.data.num.resize(n_num);

  std::vector<std::int32_t> cat_ids(n_cat);
  std::vector<double> nums(n_num);
  for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
    Rng rng = Rng::stream(seed, "gen.sample", static_cast<std::uint64_t>(i));
    for (std::size_t f = 0; f < n_cat; ++f) {
      cat_ids[f] = static_cast<std::int32_t>(
          rng.uniform_int(static_cast<std::uint64_t>(cfg.categorical_fields[f].vocab_size)));
      out.data.cat[f].push_back(cat_ids[f]);
    }
    for (std::size_t f = 0; f < n_num; ++f) {
      // round through float: the dataset file stores 32-bit values and the
      // oracle posterior must match what a reader of that file computes
      const float v = static_cast<float>(rng.normal());
      nums[f] = static_cast<double>(v);
      out.data.num[f].push_back(v);
    }
    const double p = pref.posterior(cat_ids, nums);
    const int u = rng.bernoulli(p) ? 1 : 0;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const auto& task = cfg.tasks[t];
      int label = 0;
      if (u == 1) {
        const bool included = !cfg.habit_masking || rng.bernoulli(task.habit_inclusion);
        label = included && rng.bernoulli(task.q_up) ? 1 : 0;
      } else {
        label = rng.bernoulli(task.q_not_up) ? 1 : 0;
      }
      out.data.labels[t].push_back(static_cast<float>(label));
    }
    out.sidecar.sample_index.push_back(i);
    out.sidecar.latent_u.push_back(u);
    out.sidecar.true_posterior.push_back(p);
  }
  return out;
}

/// Oracle posterior for a row of an already-materialized dataset.
inline double true_posterior(const PreferenceModel& pref, const Dataset& ds, std::int64_t row) {
  std::vector<std::int32_t> cat_ids(ds.cat.size());
  std::vector<double> nums(ds.num.size());
  for (std::size_t f = 0; f < ds.cat.size(); ++f) {
    cat_ids[f] = ds.cat[f][static_cast<std::size_t>(row)];
  }
  for (std::size_t f = 0; f < ds.num.size(); ++f) {
    nums[f] = static_cast<double>(ds.num[f][static_cast<std::size_t>(row)]);
  }
  return pref.posterior(cat_ids, nums);
}

/// Sum over tasks of the expected interaction probability given the latent
/// state, under the generating process.
inline double expected_interactions_given_u(const GeneratorConfig& cfg, int u) {
  double total = 0;
  for (const auto& t : cfg.tasks) {
    if (u == 1) {
      total += (cfg.habit_masking ? t.habit_inclusion : 1.0) * t.q_up;
    } else {
      total += t.q_not_up;
    }
  }
  return total;
}

/// Population counts behind the conditional-rate inequality.
struct CountsTable {
  std::int64_t n_up = 0;
  std::int64_t n_not_up = 0;
  std::vector<std::int64_t> n_t_up;      // per task: positives among u=1
  std::vector<std::int64_t> n_t_not_up;  // per task: positives among u=0
};

inline CountsTable tally_counts(const Dataset& ds, const Sidecar& sc) {
  if (sc.n_rows() != ds.n_rows()) throw ShapeError("tally_counts: sidecar/dataset row mismatch");
  CountsTable c;
  c.n_t_up.assign(ds.labels.size(), 0);
  c.n_t_not_up.assign(ds.labels.size(), 0);
  for (std::int64_t r = 0; r < ds.n_rows(); ++r) {
    const bool up = sc.latent_u[static_cast<std::size_t>(r)] == 1;
    (up ? c.n_up : c.n_not_up) += 1;
    for (std::size_t t = 0; t < ds.labels.size(); ++t) {
      if (ds.labels[t][static_cast<std::size_t>(r)] != 0) {
        (up ? c.n_t_up[t] : c.n_t_not_up[t]) += 1;
      }
    }
  }
  return c;
}

/// The mediant chain: positives are relatively more frequent among preferring
/// users than pooled, and pooled more than among non-preferring users.
struct MediantReport {
  double rate_up = 0;
  double pooled = 0;
  double rate_not_up = 0;
  bool holds = false;
};

inline MediantReport verify_mediant(const CountsTable& counts, std::size_t task) {
  if (task >= counts.n_t_up.size()) throw Error("verify_mediant: no such task index");
  if (counts.n_up == 0 || counts.n_not_up == 0) {
    throw NumericError("verify_mediant: empty latent group");
  }
  MediantReport r;
  r.rate_up = static_cast<double>(counts.n_t_up[task]) / static_cast<double>(counts.n_up);
  r.rate_not_up =
      static_cast<double>(counts.n_t_not_up[task]) / static_cast<double>(counts.n_not_up);
  r.pooled = static_cast<double>(counts.n_t_up[task] + counts.n_t_not_up[task]) /
             static_cast<double>(counts.n_up + counts.n_not_up);
  r.holds = r.rate_up > r.pooled && r.pooled > r.rate_not_up;
  return r;
}

}  // namespace dlen
