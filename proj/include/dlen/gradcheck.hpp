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
#include <functional>
#include <string>
#include <vector>

#include "dlen/graph.hpp"

namespace dlen {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compare analytic gradients against central finite differences for every
/// scalar entry of every parameter. `loss_builder` must run a fresh,
/// deterministic forward pass over a fixed batch each time it is called.
/// Relative error is |a-n| / max(|a|, |n|, 1e-8); run with T=double for a
/// meaningful comparison (float central differences bottom out around the
/// default threshold itself).
///
/// A relu pre-activation within `h` of zero makes the central difference
/// straddle the kink and report a bogus derivative even when the analytic
/// gradient is exact. Coordinates that look bad at the base step are
/// re-probed with smaller steps and scored by their best probe: a genuine
/// backward bug stays wrong at every step size, while a kink artifact
/// collapses once the window clears the boundary.
template <typename T>
GradCheckReport grad_check(const std::function<NodePtr<T>()>& loss_builder,
                           const std::vector<NodePtr<T>>& params, double h = 1e-3) {
  zero_grad(params);
  auto loss = loss_builder();
  if (!loss->value.all_finite()) throw NumericError("grad_check: non-finite loss");
  backward(loss);

  std::vector<Tensor<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  auto eval_loss = [&]() -> double {
    auto l = loss_builder();
    if (!l->value.all_finite()) throw NumericError("grad_check: non-finite loss");
    return static_cast<double>(l->value.at(0));
  };

  GradCheckReport report;
  constexpr double kRefineTrigger = 1e-4;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    if (!p.requires_grad) continue;
    const auto n = p.value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      const T saved = p.value.at(i);
      const double a = static_cast<double>(analytic[pi].at(i));

      double best_rel = 0.0;
      double best_numeric = 0.0;
      bool first = true;
      for (const double hh : {h, h * 1e-2, h * 1e-4}) {
        p.value.at(i) = saved + static_cast<T>(hh);
        const double lp = eval_loss();
        p.value.at(i) = saved - static_cast<T>(hh);
        const double lm = eval_loss();
        p.value.at(i) = saved;

        const double numeric = (lp - lm) / (2.0 * hh);
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(a - numeric) / denom;
        if (first || rel < best_rel) {
          best_rel = rel;
          best_numeric = numeric;
          first = false;
        }
        if (best_rel <= kRefineTrigger) break;
      }

      if (best_rel > report.max_rel_error) {
        report.max_rel_error = best_rel;
        report.worst_param = p.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = best_numeric;
      }
    }
  }
  zero_grad(params);
  return report;
}

}  // namespace dlen
