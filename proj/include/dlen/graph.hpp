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
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dlen/tensor.hpp"

namespace dlen {

// Reverse-mode autodiff at tensor granularity. Every forward pass builds a
// fresh graph of Nodes; parameters are long-lived leaf nodes whose grads
// accumulate across backward() and are zeroed at the start of each optimizer
// step cycle. Single-threaded per graph.

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  bool backward_done = false;
  std::string name;  // parameters only
  std::vector<NodePtr<T>> parents;
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (requires_grad && !grad.same_shape(value)) grad = Tensor<T>::zeros(value.shape());
  }
};

template <typename T>
NodePtr<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

/// Leaf node; with requires_grad it behaves like a parameter (grads retained).
template <typename T>
NodePtr<T> leaf(Tensor<T> value, bool requires_grad, std::string name = {}) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  n->ensure_grad();
  return n;
}

template <typename T>
void zero_grad(const std::vector<NodePtr<T>>& params) {
  for (const auto& p : params) {
    if (p->requires_grad) p->grad.fill(T(0));
  }
}

namespace detail {

template <typename T>
NodePtr<T> make_op(Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->ensure_grad();
    n->backprop = std::move(backprop);
  }
  return n;
}

}  // namespace detail

/// y[b,j] = sum_i x[b,i] * w[i,j] + bias[j]
template <typename T>
NodePtr<T> affine(const NodePtr<T>& x, const NodePtr<T>& w, const NodePtr<T>& bias) {
  const auto& xv = x->value;
  const auto& wv = w->value;
  const auto& bv = bias->value;
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.extent(1) != wv.extent(0) ||
      wv.extent(1) != bv.extent(0)) {
    throw ShapeError("affine: input " + shape_to_string(xv.shape()) + " incompatible with weights " +
                     shape_to_string(wv.shape()) + " / bias " + shape_to_string(bv.shape()));
  }
  const std::int64_t batch = xv.extent(0), in = xv.extent(1), out = wv.extent(1);
  Tensor<T> y({batch, out});
  for (std::int64_t b = 0; b < batch; ++b) {
    T* yrow = &y.at(b, 0);
    for (std::int64_t j = 0; j < out; ++j) yrow[j] = bv.at(j);
    for (std::int64_t i = 0; i < in; ++i) {
      const T xv_bi = xv.at(b, i);
      const T* wrow = &wv.at(i, 0);
      for (std::int64_t j = 0; j < out; ++j) yrow[j] += xv_bi * wrow[j];
    }
  }
  return detail::make_op<T>(std::move(y), {x, w, bias}, [batch, in, out](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const auto& g = self.grad;
    if (xn.requires_grad) {
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* grow = &g.at(b, 0);
        T* xgrow = &xn.grad.at(b, 0);
        for (std::int64_t i = 0; i < in; ++i) {
          const T* wrow = &wn.value.at(i, 0);
          T acc = 0;
          for (std::int64_t j = 0; j < out; ++j) acc += grow[j] * wrow[j];
          xgrow[i] += acc;
        }
      }
    }
    if (wn.requires_grad) {
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* grow = &g.at(b, 0);
        const T* xrow = &xn.value.at(b, 0);
        for (std::int64_t i = 0; i < in; ++i) {
          const T x_bi = xrow[i];
          T* wgrow = &wn.grad.at(i, 0);
          for (std::int64_t j = 0; j < out; ++j) wgrow[j] += x_bi * grow[j];
        }
      }
    }
    if (bn.requires_grad) {
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* grow = &g.at(b, 0);
        for (std::int64_t j = 0; j < out; ++j) bn.grad.at(j) += grow[j];
      }
    }
  });
}

template <typename T>
NodePtr<T> relu(const NodePtr<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data()) v = v > T(0) ? v : T(0);
  return detail::make_op<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const auto n = self.value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      if (xn.value.at(i) > T(0)) xn.grad.at(i) += self.grad.at(i);
    }
  });
}

namespace detail {

// Probabilities are kept strictly inside (0,1); the bounds are a numerical
// guard against underflow to exactly 0 or rounding up to exactly 1.
inline constexpr double kProbFloor = 1e-38;
inline constexpr double kProbCeil = 1.0 - 1.1920929e-7;  // 1 - 2^-23

template <typename T>
T stable_sigmoid(T x) {
  T s;
  if (x >= T(0)) {
    const T e = std::exp(-x);
    s = T(1) / (T(1) + e);
  } else {
    const T e = std::exp(x);
    s = e / (T(1) + e);
  }
  if (s < T(kProbFloor)) s = T(kProbFloor);
  if (s > T(kProbCeil)) s = T(kProbCeil);
  return s;
}

}  // namespace detail

/// Elementwise logistic, stable branch form; outputs strictly in (0,1).
template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.data()) v = detail::stable_sigmoid(v);
  return detail::make_op<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const auto n = self.value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      const T s = self.value.at(i);
      xn.grad.at(i) += self.grad.at(i) * s * (T(1) - s);
    }
  });
}

/// Row-wise softmax, max-subtracted for stability; rows sum to 1.
template <typename T>
NodePtr<T> softmax_rows(const NodePtr<T>& x) {
  const auto& xv = x->value;
  if (xv.rank() != 2) throw ShapeError("softmax_rows: expected rank-2 input");
  const std::int64_t batch = xv.extent(0), n = xv.extent(1);
  Tensor<T> y({batch, n});
  for (std::int64_t b = 0; b < batch; ++b) {
    T mx = xv.at(b, 0);
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xv.at(b, j));
    T sum = 0;
    for (std::int64_t j = 0; j < n; ++j) {
      const T e = std::exp(xv.at(b, j) - mx);
      y.at(b, j) = e;
      sum += e;
    }
    for (std::int64_t j = 0; j < n; ++j) y.at(b, j) /= sum;
  }
  return detail::make_op<T>(std::move(y), {x}, [batch, n](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    for (std::int64_t b = 0; b < batch; ++b) {
      T dot = 0;
      for (std::int64_t j = 0; j < n; ++j) dot += self.grad.at(b, j) * self.value.at(b, j);
      for (std::int64_t j = 0; j < n; ++j) {
        xn.grad.at(b, j) += self.value.at(b, j) * (self.grad.at(b, j) - dot);
      }
    }
  });
}

/// Concatenate rank-2 tensors along columns.
template <typename T>
NodePtr<T> concat_cols(const std::vector<NodePtr<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::int64_t batch = parts[0]->value.extent(0);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p->value.rank() != 2 || p->value.extent(0) != batch) {
      throw ShapeError("concat_cols: inconsistent batch extents");
    }
    total += p->value.extent(1);
  }
  Tensor<T> y({batch, total});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p->value.extent(1);
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t j = 0; j < w; ++j) y.at(b, off + j) = p->value.at(b, j);
    }
    off += w;
  }
  return detail::make_op<T>(std::move(y), parts, [batch](Node<T>& self) {
    std::int64_t off = 0;
    for (auto& pp : self.parents) {
      const std::int64_t w = pp->value.extent(1);
      if (pp->requires_grad) {
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t j = 0; j < w; ++j) pp->grad.at(b, j) += self.grad.at(b, off + j);
        }
      }
      off += w;
    }
  });
}

inline IoError oov_id_error(const std::string& field, std::int32_t id, std::int64_t vocab) {
  return IoError("categorical id " + std::to_string(id) + " out of vocabulary (size " +
                 std::to_string(vocab) + ") for field '" + field + "'");
}

/// Gather rows of an embedding table: out[k,:] = table[ids[k],:].
template <typename T>
NodePtr<T> embedding_rows(const NodePtr<T>& table, std::vector<std::int32_t> ids) {
  const auto& tv = table->value;
  if (tv.rank() != 2) throw ShapeError("embedding_rows: table must be rank 2");
  const std::int64_t vocab = tv.extent(0), dim = tv.extent(1);
  const std::int64_t batch = static_cast<std::int64_t>(ids.size());
  Tensor<T> y({batch, dim});
  for (std::int64_t k = 0; k < batch; ++k) {
    const std::int32_t id = ids[static_cast<std::size_t>(k)];
    if (id < 0 || id >= vocab) {
      throw oov_id_error(table->name, id, vocab);
    }
    for (std::int64_t j = 0; j < dim; ++j) y.at(k, j) = tv.at(id, j);
  }
  return detail::make_op<T>(std::move(y), {table},
                            [ids = std::move(ids), dim](Node<T>& self) {
                              auto& tn = *self.parents[0];
                              if (!tn.requires_grad) return;
                              for (std::size_t k = 0; k < ids.size(); ++k) {
                                const std::int64_t row = ids[k];
                                for (std::int64_t j = 0; j < dim; ++j) {
                                  tn.grad.at(row, j) += self.grad.at(static_cast<std::int64_t>(k), j);
                                }
                              }
                            });
}

/// out[b,:] = sum_e gate[b,e] * experts[e][b,:]
template <typename T>
NodePtr<T> mix_experts(const NodePtr<T>& gate, const std::vector<NodePtr<T>>& experts) {
  const auto& gv = gate->value;
  const std::int64_t n_experts = static_cast<std::int64_t>(experts.size());
  if (gv.rank() != 2 || gv.extent(1) != n_experts) {
    throw ShapeError("mix_experts: gate " + shape_to_string(gv.shape()) + " vs " +
                     std::to_string(experts.size()) + " experts");
  }
  const std::int64_t batch = gv.extent(0);
  const std::int64_t dim = experts[0]->value.extent(1);
  for (const auto& e : experts) {
    if (e->value.extent(0) != batch || e->value.extent(1) != dim) {
      throw ShapeError("mix_experts: expert outputs must share shape");
    }
  }
  Tensor<T> y({batch, dim});
  for (std::int64_t e = 0; e < n_experts; ++e) {
    const auto& ev = experts[static_cast<std::size_t>(e)]->value;
    for (std::int64_t b = 0; b < batch; ++b) {
      const T w = gv.at(b, e);
      for (std::int64_t j = 0; j < dim; ++j) y.at(b, j) += w * ev.at(b, j);
    }
  }
  std::vector<NodePtr<T>> parents{gate};
  parents.insert(parents.end(), experts.begin(), experts.end());
  return detail::make_op<T>(std::move(y), std::move(parents), [batch, dim, n_experts](Node<T>& self) {
    auto& gn = *self.parents[0];
    for (std::int64_t e = 0; e < n_experts; ++e) {
      auto& en = *self.parents[static_cast<std::size_t>(e) + 1];
      for (std::int64_t b = 0; b < batch; ++b) {
        const T w = gn.value.at(b, e);
        T dot = 0;
        for (std::int64_t j = 0; j < dim; ++j) {
          const T g = self.grad.at(b, j);
          if (en.requires_grad) en.grad.at(b, j) += w * g;
          dot += g * en.value.at(b, j);
        }
        if (gn.requires_grad) gn.grad.at(b, e) += dot;
      }
    }
  });
}

/// Free reinterpretation of the layout; gradient passes through unchanged.
template <typename T>
NodePtr<T> reshape(const NodePtr<T>& x, Shape shape) {
  if (shape_numel(shape) != x->value.numel()) {
    throw ShapeError("reshape: " + shape_to_string(x->value.shape()) + " to " +
                     shape_to_string(shape) + " changes element count");
  }
  Tensor<T> y(std::move(shape), x->value.data());
  return detail::make_op<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const auto n = self.value.numel();
    for (std::int64_t i = 0; i < n; ++i) xn.grad.at(i) += self.grad.at(i);
  });
}

/// Multiply by a fixed scalar (e.g. the per-task alpha cap).
template <typename T>
NodePtr<T> scale(const NodePtr<T>& x, T c) {
  Tensor<T> y = x->value;
  for (auto& v : y.data()) v *= c;
  return detail::make_op<T>(std::move(y), {x}, [c](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const auto n = self.value.numel();
    for (std::int64_t i = 0; i < n; ++i) xn.grad.at(i) += c * self.grad.at(i);
  });
}

/// Total-probability composition p = p1*u + p0*(1-u), elementwise.
/// Differentiable in all three arguments.
template <typename T>
NodePtr<T> compose_probability(const NodePtr<T>& p_given_up, const NodePtr<T>& p_up,
                               const NodePtr<T>& p_given_not_up) {
  check_same_shape(p_given_up->value, p_up->value, "compose_probability");
  check_same_shape(p_given_up->value, p_given_not_up->value, "compose_probability");
  const auto n = p_up->value.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double p1 = static_cast<double>(p_given_up->value.at(i));
    const double u = static_cast<double>(p_up->value.at(i));
    const double p0 = static_cast<double>(p_given_not_up->value.at(i));
    if (p1 < 0 || p1 > 1 || u < 0 || u > 1 || p0 < 0 || p0 > 1) {
      throw NumericError("compose_probability: argument outside [0,1]");
    }
  }
  Tensor<T> y(p_up->value.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const T p1 = p_given_up->value.at(i);
    const T u = p_up->value.at(i);
    const T p0 = p_given_not_up->value.at(i);
    y.at(i) = p1 * u + p0 * (T(1) - u);
  }
  return detail::make_op<T>(std::move(y), {p_given_up, p_up, p_given_not_up}, [n](Node<T>& self) {
    auto& p1n = *self.parents[0];
    auto& un = *self.parents[1];
    auto& p0n = *self.parents[2];
    for (std::int64_t i = 0; i < n; ++i) {
      const T g = self.grad.at(i);
      const T p1 = p1n.value.at(i);
      const T u = un.value.at(i);
      const T p0 = p0n.value.at(i);
      if (p1n.requires_grad) p1n.grad.at(i) += g * u;
      if (un.requires_grad) un.grad.at(i) += g * (p1 - p0);
      if (p0n.requires_grad) p0n.grad.at(i) += g * (T(1) - u);
    }
  });
}

inline constexpr double kBceEps = 1e-7;

/// Mean binary cross-entropy over a batch of probabilities against 0/1
/// labels. Probabilities are clamped to [eps, 1-eps] before the log; the
/// clamp contributes zero gradient outside its range.
template <typename T>
NodePtr<T> bce_mean(const NodePtr<T>& p, const Tensor<T>& labels) {
  check_same_shape(p->value, labels, "bce_mean");
  const auto n = p->value.numel();
  if (n == 0) throw ShapeError("bce_mean: empty batch");
  for (std::int64_t i = 0; i < n; ++i) {
    const T y = labels.at(i);
    if (y != T(0) && y != T(1)) {
      throw NumericError("bce_mean: label outside {0,1} at index " + std::to_string(i));
    }
  }
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double pc = std::clamp(static_cast<double>(p->value.at(i)), kBceEps, 1.0 - kBceEps);
    const double y = static_cast<double>(labels.at(i));
    acc += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
  }
  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  return detail::make_op<T>(std::move(loss), {p}, [labels, n](Node<T>& self) {
    auto& pn = *self.parents[0];
    if (!pn.requires_grad) return;
    const T g = self.grad.at(0);
    const T inv_n = T(1) / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double pv = static_cast<double>(pn.value.at(i));
      if (pv < kBceEps || pv > 1.0 - kBceEps) continue;  // clamped: flat
      const double y = static_cast<double>(labels.at(i));
      const double d = -y / pv + (1.0 - y) / (1.0 - pv);
      pn.grad.at(i) += g * inv_n * static_cast<T>(d);
    }
  });
}

/// Weighted sum of scalar nodes (task losses).
template <typename T>
NodePtr<T> add_weighted(const std::vector<NodePtr<T>>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ShapeError("add_weighted: need matching non-empty terms and weights");
  }
  double acc = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.numel() != 1) throw ShapeError("add_weighted: terms must be scalars");
    acc += weights[i] * static_cast<double>(terms[i]->value.at(0));
  }
  Tensor<T> y = Tensor<T>::scalar(static_cast<T>(acc));
  return detail::make_op<T>(std::move(y), terms, [weights](Node<T>& self) {
    const T g = self.grad.at(0);
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& tn = *self.parents[i];
      if (tn.requires_grad) tn.grad.at(0) += g * static_cast<T>(weights[i]);
    }
  });
}

/// Run reverse-mode accumulation from a scalar loss. Each graph may be
/// consumed once; parameters reachable from the loss receive d(loss)/d(param)
/// added into their grad tensors.
template <typename T>
void backward(const NodePtr<T>& loss) {
  if (!loss) throw Error("backward: null loss node");
  if (loss->value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_to_string(loss->value.shape()));
  }
  if (!loss->requires_grad) {
    throw Error("backward: no forward pass recorded (loss does not depend on any parameter)");
  }
  if (loss->backward_done) {
    throw Error("backward: this graph was already consumed; run a new forward pass");
  }
  if (!loss->value.all_finite()) throw NumericError("backward: non-finite loss");

  // Iterative post-order DFS for a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<const Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* parent = node->parents[idx].get();
      ++idx;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->grad.fill(T(0));
  loss->grad.at(0) = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backprop) node->backprop(*node);
  }
  loss->backward_done = true;
}

}  // namespace dlen
