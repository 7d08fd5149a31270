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

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlen/data.hpp"
#include "dlen/fusion.hpp"
#include "dlen/models.hpp"
#include "dlen/optimizer.hpp"
#include "dlen/synth.hpp"

namespace dlen {

// Experiment configs are JSON with a strict schema: every key is checked
// against the section's allowed set before any work happens, and unknown
// keys are rejected by name. One experiment seed drives all randomness.

struct TrainingConfig {
  int epochs = 1;
  int batch_size = 512;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct EvaluationConfig {
  std::uint64_t split_salt = 1;
  bool latent_metrics = true;
};

struct FusionConfig {
  std::vector<double> task_weights;  // empty = equal weights
  double gamma = 1.0;
  std::int64_t impression_size = 50;
  std::int64_t top_k = 10;
};

struct BenchConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

struct DataConfig {
  std::string train_path = "train.tsv";
  std::string sidecar_path = "sidecar.tsv";
  FeatureSchema features;
  bool has_generator = false;
  GeneratorConfig generator;
};

struct ExperimentConfig {
  ModelConfig model;
  DataConfig data;
  TrainingConfig training;
  EvaluationConfig evaluation;
  FusionConfig fusion;
  BenchConfig bench;
  std::string raw;  // exact file bytes, hashed into every manifest

  std::uint64_t config_hash() const { return fnv1a64(raw); }

  DatasetSchema dataset_schema() const {
    DatasetSchema s;
    s.task_names = model.task_names;
    s.features = data.features;
    return s;
  }

  FusionWeights fusion_weights(FusionMode mode) const {
    FusionWeights w;
    w.task_weights = fusion.task_weights;
    if (w.task_weights.empty()) {
      w.task_weights.assign(static_cast<std::size_t>(model.n_tasks), 1.0);
    }
    w.gamma = fusion.gamma;
    w.mode = mode;
    return w;
  }

  void validate() const {
    model.validate();
    data.features.validate();
    if (data.has_generator) {
      data.generator.validate();
      if (data.generator.tasks.size() != model.task_names.size()) {
        throw ConfigError("generator task count does not match model tasks");
      }
      for (std::size_t t = 0; t < model.task_names.size(); ++t) {
        if (data.generator.tasks[t].name != model.task_names[t]) {
          throw ConfigError("generator task '" + data.generator.tasks[t].name +
                            "' does not match model task '" + model.task_names[t] + "'");
        }
      }
    }
    if (training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (training.learning_rate <= 0) throw ConfigError("training.learning_rate must be positive");
    if (!fusion.task_weights.empty() &&
        fusion.task_weights.size() != model.task_names.size()) {
      throw ConfigError("fusion.task_weights must have one entry per task");
    }
    if (fusion.impression_size < 1 || fusion.top_k < 1 ||
        fusion.top_k > fusion.impression_size) {
      throw ConfigError("fusion needs 1 <= top_k <= impression_size");
    }
    fusion_weights(FusionMode::Latent).validate();
    if (bench.seeds.empty()) throw ConfigError("bench.seeds must not be empty");
  }
};

namespace detail {

using Json = nlohmann::json;

inline void check_keys(const Json& obj, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) {
      if (it.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + section);
  }
}

inline const Json& require_section(const Json& root, const std::string& key) {
  auto it = root.find(key);
  if (it == root.end()) throw ConfigError("missing section '" + key + "'");
  if (!it->is_object()) throw ConfigError("section '" + key + "' must be an object");
  return *it;
}

template <typename T>
T get_field(const Json& obj, const std::string& section, const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError("missing key '" + key + "' in " + section);
  try {
    return it->get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("bad value for '" + key + "' in " + section + ": " + e.what());
  }
}

template <typename T>
T get_field_or(const Json& obj, const std::string& section, const std::string& key, T fallback) {
  if (obj.find(key) == obj.end()) return fallback;
  return get_field<T>(obj, section, key);
}

inline MlpSpec widths_to_spec(const std::vector<int>& widths) {
  MlpSpec spec;
  spec.layer_widths = widths;
  return spec;
}

inline ModelConfig parse_model(const Json& j) {
  check_keys(j, "model",
             {"kind", "tasks", "n_shared_experts", "n_task_experts", "expert_widths",
              "tower_widths", "hidden_state_widths", "hidden_state_input", "alpha",
              "task_loss_weights"});
  ModelConfig m;
  m.kind = model_kind_from_string(get_field<std::string>(j, "model", "kind"));
  m.task_names = get_field<std::vector<std::string>>(j, "model", "tasks");
  m.n_tasks = static_cast<int>(m.task_names.size());
  m.n_shared_experts = get_field_or<int>(j, "model", "n_shared_experts", 5);
  m.n_task_experts = get_field_or<int>(j, "model", "n_task_experts", 2);
  m.expert_spec = widths_to_spec(
      get_field_or<std::vector<int>>(j, "model", "expert_widths", {256, 128, 64}));
  m.tower_spec = widths_to_spec(get_field_or<std::vector<int>>(j, "model", "tower_widths", {64}));
  m.hidden_state_spec = widths_to_spec(
      get_field_or<std::vector<int>>(j, "model", "hidden_state_widths", {256, 128, 64}));
  const std::string hs_input =
      get_field_or<std::string>(j, "model", "hidden_state_input", "expert_mixture");
  if (hs_input == "expert_mixture") {
    m.hidden_state_input = HiddenStateInput::ExpertMixture;
  } else if (hs_input == "raw_features") {
    m.hidden_state_input = HiddenStateInput::RawFeatures;
  } else {
    throw ConfigError("bad value for 'hidden_state_input' in model: '" + hs_input + "'");
  }
  if (j.find("alpha") != j.end()) {
    const Json& a = j.at("alpha");
    if (!a.is_object()) throw ConfigError("model.alpha must be an object");
    check_keys(a, "model.alpha", {"mode", "multiplier", "values"});
    const std::string mode = get_field<std::string>(a, "model.alpha", "mode");
    if (mode == "rate_scaled") {
      m.alpha_policy.mode = AlphaMode::RateScaled;
      m.alpha_policy.multiplier = get_field_or<double>(a, "model.alpha", "multiplier", 0.5);
    } else if (mode == "fixed") {
      m.alpha_policy.mode = AlphaMode::Fixed;
      m.alpha_policy.fixed_alphas = get_field<std::vector<double>>(a, "model.alpha", "values");
    } else {
      throw ConfigError("bad value for 'mode' in model.alpha: '" + mode + "'");
    }
  }
  m.task_loss_weights =
      get_field_or<std::vector<double>>(j, "model", "task_loss_weights", {});
  return m;
}

inline FeatureSchema parse_features(const Json& j) {
  check_keys(j, "data.features", {"categorical", "numeric"});
  FeatureSchema s;
  if (j.find("categorical") != j.end()) {
    const Json& cats = j.at("categorical");
    if (!cats.is_array()) throw ConfigError("data.features.categorical must be an array");
    for (const auto& c : cats) {
      check_keys(c, "data.features.categorical[]", {"name", "vocab", "dim"});
      CategoricalField f;
      f.name = get_field<std::string>(c, "data.features.categorical[]", "name");
      f.vocab_size = get_field<std::int64_t>(c, "data.features.categorical[]", "vocab");
      f.embedding_dim = get_field<std::int64_t>(c, "data.features.categorical[]", "dim");
      s.categorical_fields.push_back(std::move(f));
    }
  }
  s.numeric_fields = get_field_or<std::vector<std::string>>(j, "data.features", "numeric", {});
  return s;
}

inline GeneratorConfig parse_generator(const Json& j, const FeatureSchema& features) {
  check_keys(j, "data.generator",
             {"n_samples", "tasks", "preference_bias", "cat_weight_std", "num_weight_std",
              "interaction_weight", "habit_masking"});
  GeneratorConfig g;
  g.categorical_fields = features.categorical_fields;
  g.numeric_fields = features.numeric_fields;
  g.n_samples = get_field_or<std::int64_t>(j, "data.generator", "n_samples", 100000);
  const Json& tasks = j.find("tasks") != j.end() ? j.at("tasks") : Json::array();
  if (!tasks.is_array() || tasks.empty()) {
    throw ConfigError("data.generator.tasks must be a non-empty array");
  }
  for (const auto& t : tasks) {
    check_keys(t, "data.generator.tasks[]", {"name", "q_up", "q_not_up", "habit_inclusion"});
    GenTask task;
    task.name = get_field<std::string>(t, "data.generator.tasks[]", "name");
    task.q_up = get_field<double>(t, "data.generator.tasks[]", "q_up");
    task.q_not_up = get_field<double>(t, "data.generator.tasks[]", "q_not_up");
    task.habit_inclusion = get_field_or<double>(t, "data.generator.tasks[]", "habit_inclusion", 0.6);
    g.tasks.push_back(std::move(task));
  }
  g.preference_bias = get_field_or<double>(j, "data.generator", "preference_bias", -1.3);
  g.cat_weight_std = get_field_or<double>(j, "data.generator", "cat_weight_std", 0.8);
  g.num_weight_std = get_field_or<double>(j, "data.generator", "num_weight_std", 0.5);
  g.interaction_weight = get_field_or<double>(j, "data.generator", "interaction_weight", 0.8);
  g.habit_masking = get_field_or<bool>(j, "data.generator", "habit_masking", true);
  return g;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text,
                                                const std::string& origin) {
  detail::Json root;
  try {
    root = detail::Json::parse(text);
  } catch (const detail::Json::exception& e) {
    throw ConfigError(origin + ": not valid JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError(origin + ": top level must be an object");
  detail::check_keys(root, "config root",
                     {"model", "data", "training", "evaluation", "fusion", "bench"});

  ExperimentConfig cfg;
  cfg.raw = text;
  cfg.model = detail::parse_model(detail::require_section(root, "model"));

  const detail::Json& data = detail::require_section(root, "data");
  detail::check_keys(data, "data", {"train_path", "sidecar_path", "features", "generator"});
  cfg.data.train_path =
      detail::get_field_or<std::string>(data, "data", "train_path", "train.tsv");
  cfg.data.sidecar_path =
      detail::get_field_or<std::string>(data, "data", "sidecar_path", "sidecar.tsv");
  cfg.data.features = detail::parse_features(detail::require_section(data, "features"));
  if (data.find("generator") != data.end()) {
    cfg.data.has_generator = true;
    cfg.data.generator = detail::parse_generator(data.at("generator"), cfg.data.features);
  }

  const detail::Json& training = detail::require_section(root, "training");
  detail::check_keys(training, "training",
                     {"epochs", "batch_size", "optimizer", "learning_rate", "seed"});
  cfg.training.epochs = detail::get_field_or<int>(training, "training", "epochs", 1);
  cfg.training.batch_size = detail::get_field_or<int>(training, "training", "batch_size", 512);
  cfg.training.optimizer = optimizer_kind_from_string(
      detail::get_field_or<std::string>(training, "training", "optimizer", "adam"));
  cfg.training.learning_rate =
      detail::get_field_or<double>(training, "training", "learning_rate", 1e-3);
  cfg.training.seed = detail::get_field<std::uint64_t>(training, "training", "seed");

  if (root.find("evaluation") != root.end()) {
    const detail::Json& ev = root.at("evaluation");
    detail::check_keys(ev, "evaluation", {"split_salt", "latent_metrics"});
    cfg.evaluation.split_salt =
        detail::get_field_or<std::uint64_t>(ev, "evaluation", "split_salt", 1);
    cfg.evaluation.latent_metrics =
        detail::get_field_or<bool>(ev, "evaluation", "latent_metrics", true);
  }
  if (root.find("fusion") != root.end()) {
    const detail::Json& fu = root.at("fusion");
    detail::check_keys(fu, "fusion", {"task_weights", "gamma", "impression_size", "top_k"});
    cfg.fusion.task_weights =
        detail::get_field_or<std::vector<double>>(fu, "fusion", "task_weights", {});
    cfg.fusion.gamma = detail::get_field_or<double>(fu, "fusion", "gamma", 1.0);
    cfg.fusion.impression_size =
        detail::get_field_or<std::int64_t>(fu, "fusion", "impression_size", 50);
    cfg.fusion.top_k = detail::get_field_or<std::int64_t>(fu, "fusion", "top_k", 10);
  }
  if (root.find("bench") != root.end()) {
    const detail::Json& be = root.at("bench");
    detail::check_keys(be, "bench", {"seeds"});
    cfg.bench.seeds = detail::get_field_or<std::vector<std::uint64_t>>(be, "bench", "seeds",
                                                                       {1, 2, 3, 4, 5});
  }

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str(), path);
}

}  // namespace dlen
