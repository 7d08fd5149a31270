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
#include <vector>

#include "dlen/graph.hpp"

namespace dlen {

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

/// First-order optimizer over a fixed parameter list. Moment accumulators are
/// keyed by parameter name and allocated on first step.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind, double learning_rate = 1e-3)
      : kind_(kind), lr_(learning_rate) {
    if (lr_ <= 0) throw ConfigError("learning rate must be positive");
  }

  OptimizerKind kind() const { return kind_; }
  std::int64_t step_count() const { return step_count_; }
  double learning_rate() const { return lr_; }

  void step(const std::vector<NodePtr<T>>& params) {
    ++step_count_;
    switch (kind_) {
      case OptimizerKind::Sgd:
        for (const auto& p : params) {
          if (!p->requires_grad) continue;
          const auto n = p->value.numel();
          for (std::int64_t i = 0; i < n; ++i) {
            p->value.at(i) -= static_cast<T>(lr_) * p->grad.at(i);
          }
        }
        break;
      case OptimizerKind::Adam: {
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
        for (const auto& p : params) {
          if (!p->requires_grad) continue;
          auto& slot = moments_[p->name.empty() ? anon_key(p.get()) : p->name];
          if (slot.m.numel() != p->value.numel()) {
            slot.m = Tensor<T>::zeros(p->value.shape());
            slot.v = Tensor<T>::zeros(p->value.shape());
          }
          const auto n = p->value.numel();
          for (std::int64_t i = 0; i < n; ++i) {
            const double g = static_cast<double>(p->grad.at(i));
            double m = beta1_ * static_cast<double>(slot.m.at(i)) + (1.0 - beta1_) * g;
            double v = beta2_ * static_cast<double>(slot.v.at(i)) + (1.0 - beta2_) * g * g;
            slot.m.at(i) = static_cast<T>(m);
            slot.v.at(i) = static_cast<T>(v);
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            p->value.at(i) -= static_cast<T>(lr_ * m_hat / (std::sqrt(v_hat) + eps_));
          }
        }
        break;
      }
    }
  }

 private:
  struct Moments {
    Tensor<T> m, v;
  };

  static std::string anon_key(const Node<T>* p) {
    return "@" + std::to_string(reinterpret_cast<std::uintptr_t>(p));
  }

  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t step_count_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace dlen
