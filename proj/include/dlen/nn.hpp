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
#include <unordered_map>
#include <utility>
#include <vector>

#include "dlen/graph.hpp"
#include "dlen/rng.hpp"
#include "dlen/tensor.hpp"

namespace dlen {

enum class Activation { ReLU };

/// Widths of a fully connected stack; ReLU after every listed layer.
struct MlpSpec {
  std::vector<int> layer_widths{256, 128, 64};
  Activation activation = Activation::ReLU;

  void validate() const {
    if (layer_widths.empty()) throw ConfigError("mlp spec needs at least one layer");
    for (int w : layer_widths) {
      if (w <= 0) throw ConfigError("mlp layer width must be positive");
    }
  }

  int output_width() const { return layer_widths.back(); }

  /// Trainable scalar count for this stack applied to `input_dim` inputs.
  std::int64_t parameter_count(std::int64_t input_dim) const {
    std::int64_t n = 0, in = input_dim;
    for (int w : layer_widths) {
      n += in * w + w;
      in = w;
    }
    return n;
  }
};

/// Owns the named parameter leaves of one model. Parameter names are unique;
/// initialization draws from a per-name stream so registration order never
/// affects values.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  enum class Init { HiddenWeight, HeadWeight, Embedding, Zero };

  NodePtr<T> create(const std::string& name, Shape shape, Init init) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    Tensor<T> value(shape);
    const std::int64_t fan_in = shape.size() == 2 ? shape[0] : 1;
    Rng rng = Rng::stream(seed_, "init." + name);
    switch (init) {
      case Init::HiddenWeight: {
        const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& v : value.data()) v = static_cast<T>(rng.normal(0.0, std));
        break;
      }
      case Init::HeadWeight:
        for (auto& v : value.data()) v = static_cast<T>(rng.normal(0.0, 0.01));
        break;
      case Init::Embedding:
        for (auto& v : value.data()) v = static_cast<T>(rng.normal(0.0, 0.1));
        break;
      case Init::Zero:
        break;
    }
    auto node = leaf<T>(std::move(value), true, name);
    index_[name] = params_.size();
    params_.push_back(node);
    return node;
  }

  /// Non-trainable named tensor, still part of the checkpoint manifest.
  NodePtr<T> create_buffer(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    auto node = leaf<T>(std::move(value), false, name);
    index_[name] = params_.size();
    params_.push_back(node);
    return node;
  }

  const std::vector<NodePtr<T>>& all() const { return params_; }

  std::vector<NodePtr<T>> trainable() const {
    std::vector<NodePtr<T>> out;
    for (const auto& p : params_) {
      if (p->requires_grad) out.push_back(p);
    }
    return out;
  }

  NodePtr<T> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return params_[it->second];
  }

  std::int64_t trainable_scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) {
      if (p->requires_grad) n += p->value.numel();
    }
    return n;
  }

 private:
  std::uint64_t seed_;
  std::vector<NodePtr<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A fully connected ReLU stack bound to named parameters in a store.
template <typename T>
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParameterStore<T>& store, const std::string& prefix, std::int64_t input_dim,
      const MlpSpec& spec, typename ParameterStore<T>::Init weight_init =
                              ParameterStore<T>::Init::HiddenWeight) {
    spec.validate();
    std::int64_t in = input_dim;
    for (std::size_t k = 0; k < spec.layer_widths.size(); ++k) {
      const std::int64_t out = spec.layer_widths[k];
      const std::string base = prefix + ".l" + std::to_string(k);
      weights_.push_back(store.create(base + ".W", {in, out}, weight_init));
      biases_.push_back(store.create(base + ".b", {out}, ParameterStore<T>::Init::Zero));
      in = out;
    }
  }

  NodePtr<T> forward(NodePtr<T> x) const {
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      x = relu(affine(x, weights_[k], biases_[k]));
    }
    return x;
  }

 private:
  std::vector<NodePtr<T>> weights_;
  std::vector<NodePtr<T>> biases_;
};

/// Single affine layer (gates, output heads).
template <typename T>
class Dense {
 public:
  Dense() = default;

  Dense(ParameterStore<T>& store, const std::string& prefix, std::int64_t input_dim,
        std::int64_t output_dim,
        typename ParameterStore<T>::Init weight_init = ParameterStore<T>::Init::HeadWeight) {
    weight_ = store.create(prefix + ".W", {input_dim, output_dim}, weight_init);
    bias_ = store.create(prefix + ".b", {output_dim}, ParameterStore<T>::Init::Zero);
  }

  NodePtr<T> forward(const NodePtr<T>& x) const { return affine(x, weight_, bias_); }

 private:
  NodePtr<T> weight_;
  NodePtr<T> bias_;
};

}  // namespace dlen
