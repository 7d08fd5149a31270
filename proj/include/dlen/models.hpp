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
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dlen/bayes.hpp"
#include "dlen/graph.hpp"
#include "dlen/nn.hpp"
#include "dlen/tensor.hpp"

namespace dlen {

struct CategoricalField {
  std::string name;
  std::int64_t vocab_size = 0;
  std::int64_t embedding_dim = 0;
};

/// Input layout: embedded categorical fields then raw numeric fields,
/// concatenated in declaration order.
struct FeatureSchema {
  std::vector<CategoricalField> categorical_fields;
  std::vector<std::string> numeric_fields;

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& f : categorical_fields) {
      if (f.name.empty()) throw ConfigError("categorical field with empty name");
      if (!seen.insert(f.name).second) throw ConfigError("duplicate field name: " + f.name);
      if (f.vocab_size < 1) throw ConfigError("field " + f.name + ": vocabulary_size must be >= 1");
      if (f.embedding_dim < 1) throw ConfigError("field " + f.name + ": embedding_dim must be >= 1");
    }
    for (const auto& n : numeric_fields) {
      if (n.empty()) throw ConfigError("numeric field with empty name");
      if (!seen.insert(n).second) throw ConfigError("duplicate field name: " + n);
    }
    if (categorical_fields.empty() && numeric_fields.empty()) {
      throw ConfigError("feature schema has no fields");
    }
  }

  std::int64_t input_dim() const {
    std::int64_t d = 0;
    for (const auto& f : categorical_fields) d += f.embedding_dim;
    return d + static_cast<std::int64_t>(numeric_fields.size());
  }
};

enum class ModelKind { MMOE, CGC, DLEN };

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mmoe") return ModelKind::MMOE;
  if (s == "cgc") return ModelKind::CGC;
  if (s == "dlen") return ModelKind::DLEN;
  throw ConfigError("unknown model kind '" + s + "' (expected mmoe, cgc or dlen)");
}

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::MMOE: return "mmoe";
    case ModelKind::CGC: return "cgc";
    case ModelKind::DLEN: return "dlen";
  }
  return "?";
}

/// What feeds the latent-state network: a dedicated gate mixing the shared
/// experts (default, symmetric with task towers) or the raw feature encoding.
enum class HiddenStateInput { ExpertMixture, RawFeatures };

struct ModelConfig {
  ModelKind kind = ModelKind::MMOE;
  int n_tasks = 1;
  std::vector<std::string> task_names;
  int n_shared_experts = 5;
  int n_task_experts = 2;  // CGC only
  MlpSpec expert_spec;
  MlpSpec tower_spec{{64}};
  MlpSpec hidden_state_spec;  // DLEN only
  HiddenStateInput hidden_state_input = HiddenStateInput::ExpertMixture;
  AlphaPolicy alpha_policy;               // DLEN only
  std::vector<double> task_loss_weights;  // empty = equal weights

  void validate() const {
    if (n_tasks < 1) throw ConfigError("n_tasks must be >= 1");
    if (static_cast<int>(task_names.size()) != n_tasks) {
      throw ConfigError("expected " + std::to_string(n_tasks) + " task names, got " +
                        std::to_string(task_names.size()));
    }
    std::unordered_set<std::string> seen;
    for (const auto& t : task_names) {
      if (t.empty()) throw ConfigError("empty task name");
      if (t.find_first_of(" \t\n") != std::string::npos) {
        throw ConfigError("task name contains whitespace: '" + t + "'");
      }
      if (!seen.insert(t).second) throw ConfigError("duplicate task name: " + t);
    }
    if (n_shared_experts < 1) throw ConfigError("n_shared_experts must be >= 1");
    if (kind == ModelKind::CGC && n_task_experts < 0) {
      throw ConfigError("n_task_experts must be >= 0");
    }
    expert_spec.validate();
    tower_spec.validate();
    if (kind == ModelKind::DLEN) hidden_state_spec.validate();
    if (!task_loss_weights.empty()) {
      if (static_cast<int>(task_loss_weights.size()) != n_tasks) {
        throw ConfigError("task_loss_weights must have one entry per task");
      }
      double sum = 0;
      for (double w : task_loss_weights) {
        if (w < 0) throw ConfigError("task loss weights must be non-negative");
        sum += w;
      }
      if (sum <= 0) throw ConfigError("task loss weights must not all be zero");
    }
  }

  int experts_per_task() const {
    return n_shared_experts + (kind == ModelKind::CGC ? n_task_experts : 0);
  }

  /// Closed-form trainable scalar count; guards silent wiring errors.
  std::int64_t parameter_count(const FeatureSchema& schema) const {
    const std::int64_t input_dim = schema.input_dim();
    const std::int64_t expert_out = expert_spec.output_width();
    const std::int64_t tower_out = tower_spec.output_width();
    std::int64_t n = 0;
    for (const auto& f : schema.categorical_fields) n += f.vocab_size * f.embedding_dim;
    std::int64_t n_experts = n_shared_experts;
    if (kind == ModelKind::CGC) n_experts += static_cast<std::int64_t>(n_tasks) * n_task_experts;
    n += n_experts * expert_spec.parameter_count(input_dim);
    const std::int64_t gate_width = experts_per_task();
    n += static_cast<std::int64_t>(n_tasks) * (input_dim * gate_width + gate_width);
    n += static_cast<std::int64_t>(n_tasks) * tower_spec.parameter_count(expert_out);
    n += static_cast<std::int64_t>(n_tasks) * (tower_out + 1);  // one output head per task
    if (kind == ModelKind::DLEN) {
      n += static_cast<std::int64_t>(n_tasks) * (tower_out + 1);  // second head per task
      std::int64_t hidden_in = input_dim;
      if (hidden_state_input == HiddenStateInput::ExpertMixture) {
        n += input_dim * n_shared_experts + n_shared_experts;  // latent gate
        hidden_in = expert_out;
      }
      n += hidden_state_spec.parameter_count(hidden_in);
      n += hidden_state_spec.output_width() + 1;  // latent head
    }
    return n;
  }
};

/// One minibatch of raw features and labels. Categorical ids are stored per
/// field, numeric values per field, labels per task (each of length `size`).
template <typename T>
struct Batch {
  std::int64_t size = 0;
  std::vector<std::vector<std::int32_t>> cat;  // [cat_field][row]
  std::vector<std::vector<T>> num;             // [num_field][row]
  std::vector<Tensor<T>> labels;               // [task], each shape [size]
  std::vector<std::int64_t> row_indices;       // original dataset rows
};

template <typename T>
struct ForwardResult {
  NodePtr<T> p_up;                         // latent state, null unless DLEN
  std::vector<NodePtr<T>> p_given_up;      // per task, DLEN only
  std::vector<NodePtr<T>> p_given_not_up;  // per task, DLEN only
  std::vector<NodePtr<T>> task_probs;      // per task: composed (DLEN) or head output
};

/// One of the three architectures, parameterized by config. All parameters
/// live in a ParameterStore under stable names, so two models built from the
/// same seed share initial values for every component they have in common.
template <typename T>
class MtlModel {
 public:
  MtlModel(ModelConfig config, FeatureSchema schema, std::uint64_t seed)
      : config_(std::move(config)), schema_(std::move(schema)), store_(seed) {
    config_.validate();
    schema_.validate();
    using Init = typename ParameterStore<T>::Init;
    const std::int64_t input_dim = schema_.input_dim();

    for (const auto& f : schema_.categorical_fields) {
      embeddings_.push_back(
          store_.create("emb." + f.name, {f.vocab_size, f.embedding_dim}, Init::Embedding));
    }
    for (int e = 0; e < config_.n_shared_experts; ++e) {
      shared_experts_.emplace_back(store_, "expert.s" + std::to_string(e), input_dim,
                                   config_.expert_spec);
    }
    if (config_.kind == ModelKind::CGC) {
      task_experts_.resize(config_.n_tasks);
      for (int t = 0; t < config_.n_tasks; ++t) {
        for (int e = 0; e < config_.n_task_experts; ++e) {
          task_experts_[t].emplace_back(store_,
                                        "expert." + config_.task_names[t] + ".e" + std::to_string(e),
                                        input_dim, config_.expert_spec);
        }
      }
    }
    for (int t = 0; t < config_.n_tasks; ++t) {
      gates_.emplace_back(store_, "gate." + config_.task_names[t], input_dim,
                          config_.experts_per_task());
    }
    const std::int64_t expert_out = config_.expert_spec.output_width();
    for (int t = 0; t < config_.n_tasks; ++t) {
      towers_.emplace_back(store_, "tower." + config_.task_names[t], expert_out,
                           config_.tower_spec);
    }
    const std::int64_t tower_out = config_.tower_spec.output_width();
    for (int t = 0; t < config_.n_tasks; ++t) {
      heads_.emplace_back(store_, "head." + config_.task_names[t], tower_out, 1);
    }
    if (config_.kind == ModelKind::DLEN) {
      for (int t = 0; t < config_.n_tasks; ++t) {
        heads_not_.emplace_back(store_, "head_not." + config_.task_names[t], tower_out, 1);
      }
      std::int64_t hidden_in = input_dim;
      if (config_.hidden_state_input == HiddenStateInput::ExpertMixture) {
        gate_up_ = Dense<T>(store_, "gate.up", input_dim, config_.n_shared_experts);
        hidden_in = expert_out;
      }
      hidden_ = Mlp<T>(store_, "hidden", hidden_in, config_.hidden_state_spec);
      head_up_ = Dense<T>(store_, "head.up", config_.hidden_state_spec.output_width(), 1);

      // Caps on P(t|not UP), kept in the checkpoint so evaluation reuses the
      // values the model was trained under. Resolvable later (base rates are
      // a property of the training data).
      Tensor<T> alphas({config_.n_tasks});
      if (alpha_ready(config_.alpha_policy)) {
        const auto a = config_.alpha_policy.resolve(static_cast<std::size_t>(config_.n_tasks));
        for (int t = 0; t < config_.n_tasks; ++t) alphas.at(t) = static_cast<T>(a[t]);
      }
      alpha_node_ = store_.create_buffer("alpha", std::move(alphas));
    }
  }

  const ModelConfig& config() const { return config_; }
  const FeatureSchema& schema() const { return schema_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }

  bool has_latent_head() const { return config_.kind == ModelKind::DLEN; }

  /// Fill the alpha buffer from per-task empirical positive rates.
  void resolve_alpha(const std::vector<double>& task_base_rates) {
    if (config_.kind != ModelKind::DLEN) return;
    AlphaPolicy policy = config_.alpha_policy;
    if (policy.mode == AlphaMode::RateScaled) policy.task_base_rates = task_base_rates;
    const auto a = policy.resolve(static_cast<std::size_t>(config_.n_tasks));
    for (int t = 0; t < config_.n_tasks; ++t) alpha_node_->value.at(t) = static_cast<T>(a[t]);
  }

  double alpha(int task) const {
    if (config_.kind != ModelKind::DLEN) throw ModeError("model has no alpha caps");
    const double a = static_cast<double>(alpha_node_->value.at(task));
    if (a <= 0 || a >= 1) {
      throw ModeError("alpha cap unresolved for task " + config_.task_names[task] +
                      "; provide base rates or load a checkpoint");
    }
    return a;
  }

  /// Embed one batch: looked-up embedding rows then raw numeric columns,
  /// concatenated in schema declaration order. Shape [batch, input_dim].
  NodePtr<T> embed(const Batch<T>& batch) const {
    if (batch.size <= 0) throw ShapeError("embed: empty batch");
    if (batch.cat.size() != schema_.categorical_fields.size() ||
        batch.num.size() != schema_.numeric_fields.size()) {
      throw ShapeError("embed: batch field counts do not match schema");
    }
    std::vector<NodePtr<T>> parts;
    for (std::size_t f = 0; f < batch.cat.size(); ++f) {
      if (static_cast<std::int64_t>(batch.cat[f].size()) != batch.size) {
        throw ShapeError("embed: categorical column length mismatch");
      }
      parts.push_back(embedding_rows(embeddings_[f], batch.cat[f]));
    }
    if (!batch.num.empty()) {
      Tensor<T> numerics({batch.size, static_cast<std::int64_t>(batch.num.size())});
      for (std::size_t f = 0; f < batch.num.size(); ++f) {
        if (static_cast<std::int64_t>(batch.num[f].size()) != batch.size) {
          throw ShapeError("embed: numeric column length mismatch");
        }
        for (std::int64_t b = 0; b < batch.size; ++b) {
          numerics.at(b, static_cast<std::int64_t>(f)) = batch.num[f][static_cast<std::size_t>(b)];
        }
      }
      parts.push_back(constant(std::move(numerics)));
    }
    return parts.size() == 1 ? parts[0] : concat_cols(parts);
  }

  ForwardResult<T> forward(const Batch<T>& batch) const {
    const NodePtr<T> x = embed(batch);
    const std::int64_t n = batch.size;

    std::vector<NodePtr<T>> shared_outs;
    shared_outs.reserve(shared_experts_.size());
    for (const auto& e : shared_experts_) shared_outs.push_back(e.forward(x));

    ForwardResult<T> result;
    if (config_.kind == ModelKind::DLEN) {
      NodePtr<T> h;
      if (config_.hidden_state_input == HiddenStateInput::ExpertMixture) {
        auto gate = softmax_rows(gate_up_.forward(x));
        h = hidden_.forward(mix_experts(gate, shared_outs));
      } else {
        h = hidden_.forward(x);
      }
      result.p_up = reshape(sigmoid(head_up_.forward(h)), {n});
    }

    for (int t = 0; t < config_.n_tasks; ++t) {
      std::vector<NodePtr<T>> experts = shared_outs;
      if (config_.kind == ModelKind::CGC) {
        for (const auto& e : task_experts_[t]) experts.push_back(e.forward(x));
      }
      auto gate = softmax_rows(gates_[t].forward(x));
      auto trunk = towers_[t].forward(mix_experts(gate, experts));
      auto p1 = reshape(sigmoid(heads_[t].forward(trunk)), {n});
      if (config_.kind == ModelKind::DLEN) {
        auto p0 = scale(reshape(sigmoid(heads_not_[t].forward(trunk)), {n}),
                        static_cast<T>(alpha(t)));
        result.p_given_up.push_back(p1);
        result.p_given_not_up.push_back(p0);
        result.task_probs.push_back(compose_probability(p1, result.p_up, p0));
      } else {
        result.task_probs.push_back(p1);
      }
    }
    return result;
  }

  /// Per-task mean BCE over the composed (or direct) task probabilities.
  std::vector<NodePtr<T>> task_loss_terms(const ForwardResult<T>& fwd,
                                          const Batch<T>& batch) const {
    if (static_cast<int>(batch.labels.size()) != config_.n_tasks) {
      throw ShapeError("loss: expected a label column per task");
    }
    std::vector<NodePtr<T>> terms;
    for (int t = 0; t < config_.n_tasks; ++t) {
      terms.push_back(bce_mean(fwd.task_probs[t], batch.labels[t]));
    }
    return terms;
  }

  NodePtr<T> combine_losses(const std::vector<NodePtr<T>>& terms) const {
    std::vector<double> weights = config_.task_loss_weights;
    if (weights.empty()) weights.assign(static_cast<std::size_t>(config_.n_tasks), 1.0);
    return add_weighted(terms, weights);
  }

  /// Weighted sum of per-task mean BCE. The latent state receives no loss
  /// term of its own; it is trained only through the composition.
  NodePtr<T> loss(const ForwardResult<T>& fwd, const Batch<T>& batch) const {
    return combine_losses(task_loss_terms(fwd, batch));
  }

 private:
  static bool alpha_ready(const AlphaPolicy& policy) {
    return policy.mode == AlphaMode::Fixed || !policy.task_base_rates.empty();
  }

  ModelConfig config_;
  FeatureSchema schema_;
  ParameterStore<T> store_;
  std::vector<NodePtr<T>> embeddings_;
  std::vector<Mlp<T>> shared_experts_;
  std::vector<std::vector<Mlp<T>>> task_experts_;  // CGC: [task][expert]
  std::vector<Dense<T>> gates_;
  std::vector<Mlp<T>> towers_;
  std::vector<Dense<T>> heads_;
  std::vector<Dense<T>> heads_not_;  // DLEN second heads
  Dense<T> gate_up_;
  Mlp<T> hidden_;
  Dense<T> head_up_;
  NodePtr<T> alpha_node_;
};

}  // namespace dlen
