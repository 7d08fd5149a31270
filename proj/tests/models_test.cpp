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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dlen/checkpoint.hpp"
#include "dlen/gradcheck.hpp"
#include "dlen/models.hpp"

using namespace dlen;

namespace {

// Plain-loop recomputation of the network pieces, independent of the graph
// ops. All in double against a double-instantiated model.
using Mat = std::vector<std::vector<double>>;

Mat o_affine(const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
  Mat y(x.size(), std::vector<double>(static_cast<std::size_t>(w.extent(1))));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::int64_t j = 0; j < w.extent(1); ++j) {
      double acc = b.at(j);
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        acc += x[i][k] * w.at(static_cast<std::int64_t>(k), j);
      }
      y[i][static_cast<std::size_t>(j)] = acc;
    }
  }
  return y;
}

Mat o_relu(Mat x) {
  for (auto& row : x) {
    for (auto& v : row) v = v > 0 ? v : 0;
  }
  return x;
}

Mat o_softmax(const Mat& x) {
  Mat y = x;
  for (auto& row : y) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return y;
}

double o_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Mat o_mlp(const MtlModel<double>& m, const std::string& prefix, const Mat& x, int n_layers) {
  Mat h = x;
  for (int k = 0; k < n_layers; ++k) {
    const std::string base = prefix + ".l" + std::to_string(k);
    h = o_relu(o_affine(h, m.store().find(base + ".W")->value,
                        m.store().find(base + ".b")->value));
  }
  return h;
}

FeatureSchema small_schema() {
  FeatureSchema s;
  s.categorical_fields = {{"item", 6, 3}, {"slot", 4, 2}};
  s.numeric_fields = {"age", "ctr"};
  return s;
}

template <typename T>
Batch<T> small_batch(const FeatureSchema& schema, int n_tasks, std::uint64_t seed,
                     std::int64_t size) {
  Batch<T> b;
  b.size = size;
  Rng rng = Rng::stream(seed, "test.batch");
  for (const auto& f : schema.categorical_fields) {
    std::vector<std::int32_t> ids;
    for (std::int64_t i = 0; i < size; ++i) {
      ids.push_back(static_cast<std::int32_t>(
          rng.uniform_int(static_cast<std::uint64_t>(f.vocab_size))));
    }
    b.cat.push_back(std::move(ids));
  }
  for (std::size_t f = 0; f < schema.numeric_fields.size(); ++f) {
    std::vector<T> vals;
    for (std::int64_t i = 0; i < size; ++i) vals.push_back(static_cast<T>(rng.normal()));
    b.num.push_back(std::move(vals));
  }
  for (int t = 0; t < n_tasks; ++t) {
    Tensor<T> labels({size});
    for (std::int64_t i = 0; i < size; ++i) labels.at(i) = rng.bernoulli(0.3) ? T(1) : T(0);
    b.labels.push_back(std::move(labels));
  }
  b.row_indices.assign(static_cast<std::size_t>(size), 0);
  return b;
}

ModelConfig small_config(ModelKind kind, int n_tasks = 2) {
  ModelConfig m;
  m.kind = kind;
  m.n_tasks = n_tasks;
  m.task_names.clear();
  for (int t = 0; t < n_tasks; ++t) m.task_names.push_back("t" + std::to_string(t));
  m.n_shared_experts = 2;
  m.n_task_experts = 1;
  m.expert_spec.layer_widths = {8, 4};
  m.tower_spec.layer_widths = {4};
  m.hidden_state_spec.layer_widths = {6, 3};
  m.alpha_policy.mode = AlphaMode::Fixed;
  m.alpha_policy.fixed_alphas.assign(static_cast<std::size_t>(n_tasks), 0.05);
  return m;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("embed looks up rows and appends numerics") {
  FeatureSchema schema;
  schema.categorical_fields = {{"f", 3, 2}};
  schema.numeric_fields = {"n"};
  MtlModel<double> model(small_config(ModelKind::MMOE, 1), schema, 1);
  auto emb = model.store().find("emb.f");
  emb->value = Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6});

  Batch<double> b;
  b.size = 1;
  b.cat = {{1}};
  b.num = {{7.5}};
  const auto x = model.embed(b);
  CHECK(x->value.data() == std::vector<double>{3, 4, 7.5});
}

TEST_CASE("embed width without numerics is the embedding total") {
  FeatureSchema schema;
  schema.categorical_fields = {{"a", 5, 3}, {"b", 4, 2}};
  CHECK(schema.input_dim() == 5);
  MtlModel<double> model(small_config(ModelKind::MMOE, 1), schema, 1);
  Batch<double> b;
  b.size = 2;
  b.cat = {{0, 4}, {1, 3}};
  const auto x = model.embed(b);
  CHECK(x->value.extent(1) == 5);
}

TEST_CASE("permuting schema field order permutes embed blocks") {
  FeatureSchema ab;
  ab.categorical_fields = {{"a", 5, 2}, {"b", 4, 2}};
  FeatureSchema ba;
  ba.categorical_fields = {{"b", 4, 2}, {"a", 5, 2}};
  MtlModel<double> m1(small_config(ModelKind::MMOE, 1), ab, 3);
  MtlModel<double> m2(small_config(ModelKind::MMOE, 1), ba, 3);

  Batch<double> b1;
  b1.size = 1;
  b1.cat = {{2}, {3}};  // a=2, b=3
  Batch<double> b2;
  b2.size = 1;
  b2.cat = {{3}, {2}};  // b=3, a=2
  const auto x1 = m1.embed(b1);
  const auto x2 = m2.embed(b2);
  CHECK(x1->value.at(0, 0) == x2->value.at(0, 2));
  CHECK(x1->value.at(0, 1) == x2->value.at(0, 3));
  CHECK(x1->value.at(0, 2) == x2->value.at(0, 0));
  CHECK(x1->value.at(0, 3) == x2->value.at(0, 1));
}

TEST_CASE("single expert degenerates to a plain tower") {
  auto cfg = small_config(ModelKind::MMOE, 1);
  cfg.n_shared_experts = 1;
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 5);
  const auto batch = small_batch<double>(schema, 1, 5, 4);
  const auto fwd = model.forward(batch);

  Mat x;
  {
    const auto xe = model.embed(batch);
    for (std::int64_t i = 0; i < batch.size; ++i) {
      std::vector<double> row;
      for (std::int64_t j = 0; j < xe->value.extent(1); ++j) row.push_back(xe->value.at(i, j));
      x.push_back(std::move(row));
    }
  }
  const Mat expert = o_mlp(model, "expert.s0", x, 2);
  const Mat trunk = o_mlp(model, "tower.t0", expert, 1);
  const Mat logit = o_affine(trunk, model.store().find("head.t0.W")->value,
                             model.store().find("head.t0.b")->value);
  for (std::int64_t i = 0; i < batch.size; ++i) {
    CHECK(fwd.task_probs[0]->value.at(i) ==
          doctest::Approx(o_sigmoid(logit[static_cast<std::size_t>(i)][0])).epsilon(1e-9));
  }
}

TEST_CASE("mmoe forward matches the step-by-step oracle") {
  auto cfg = small_config(ModelKind::MMOE, 2);
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 7);
  const auto batch = small_batch<double>(schema, 2, 7, 3);
  const auto fwd = model.forward(batch);

  Mat x;
  const auto xe = model.embed(batch);
  for (std::int64_t i = 0; i < batch.size; ++i) {
    std::vector<double> row;
    for (std::int64_t j = 0; j < xe->value.extent(1); ++j) row.push_back(xe->value.at(i, j));
    x.push_back(std::move(row));
  }
  const Mat e0 = o_mlp(model, "expert.s0", x, 2);
  const Mat e1 = o_mlp(model, "expert.s1", x, 2);

  for (int t = 0; t < 2; ++t) {
    const std::string task = "t" + std::to_string(t);
    const Mat gate = o_softmax(o_affine(x, model.store().find("gate." + task + ".W")->value,
                                        model.store().find("gate." + task + ".b")->value));
    Mat mixed(x.size(), std::vector<double>(e0[0].size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < e0[i].size(); ++j) {
        mixed[i][j] = gate[i][0] * e0[i][j] + gate[i][1] * e1[i][j];
      }
    }
    const Mat trunk = o_mlp(model, "tower." + task, mixed, 1);
    const Mat logit = o_affine(trunk, model.store().find("head." + task + ".W")->value,
                               model.store().find("head." + task + ".b")->value);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(fwd.task_probs[static_cast<std::size_t>(t)]->value.at(static_cast<std::int64_t>(i)) ==
            doctest::Approx(o_sigmoid(logit[i][0])).epsilon(1e-9));
    }
  }
}

TEST_CASE("cgc with zero task experts reduces to mmoe") {
  auto cgc_cfg = small_config(ModelKind::CGC, 2);
  cgc_cfg.n_task_experts = 0;
  auto mmoe_cfg = small_config(ModelKind::MMOE, 2);
  const FeatureSchema schema = small_schema();
  MtlModel<double> cgc(cgc_cfg, schema, 11);
  MtlModel<double> mmoe(mmoe_cfg, schema, 11);
  const auto batch = small_batch<double>(schema, 2, 11, 5);
  const auto f1 = cgc.forward(batch);
  const auto f2 = mmoe.forward(batch);
  for (int t = 0; t < 2; ++t) {
    CHECK(f1.task_probs[static_cast<std::size_t>(t)]->value.data() ==
          f2.task_probs[static_cast<std::size_t>(t)]->value.data());
  }
}

TEST_CASE("cgc gate width covers shared plus task experts") {
  auto cfg = small_config(ModelKind::CGC, 2);
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 2);
  const auto gate_w = model.store().find("gate.t0.W");
  CHECK(gate_w->value.extent(1) == cfg.n_shared_experts + cfg.n_task_experts);
  CHECK(model.store().find("expert.t0.e0.l0.W") != nullptr);
  CHECK(model.store().find("expert.t1.e0.l0.W") != nullptr);
}

TEST_CASE("task experts receive no gradient from the other task's loss") {
  auto cfg = small_config(ModelKind::CGC, 2);
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 13);
  const auto batch = small_batch<double>(schema, 2, 13, 6);
  zero_grad(model.store().all());
  const auto fwd = model.forward(batch);
  const auto terms = model.task_loss_terms(fwd, batch);
  backward(terms[1]);  // only task t1's loss

  const auto& a_grad = model.store().find("expert.t0.e0.l0.W")->grad;
  for (const auto v : a_grad.data()) CHECK(v == 0.0);

  const auto& b_grad = model.store().find("expert.t1.e0.l0.W")->grad;
  double b_norm = 0;
  for (const auto v : b_grad.data()) b_norm += std::abs(v);
  CHECK(b_norm > 0.0);

  const auto& shared_grad = model.store().find("expert.s0.l0.W")->grad;
  double s_norm = 0;
  for (const auto v : shared_grad.data()) s_norm += std::abs(v);
  CHECK(s_norm > 0.0);
}

TEST_CASE("collapsing the negative head recovers the joint score") {
  auto cfg = small_config(ModelKind::DLEN, 2);
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 17);
  for (int t = 0; t < 2; ++t) {
    model.store().find("head_not.t" + std::to_string(t) + ".W")->value.fill(0);
    model.store().find("head_not.t" + std::to_string(t) + ".b")->value.fill(-30);
  }
  const auto batch = small_batch<double>(schema, 2, 17, 5);
  const auto fwd = model.forward(batch);
  for (int t = 0; t < 2; ++t) {
    for (std::int64_t i = 0; i < batch.size; ++i) {
      const double p1 = fwd.p_given_up[static_cast<std::size_t>(t)]->value.at(i);
      const double pu = fwd.p_up->value.at(i);
      CHECK(fwd.task_probs[static_cast<std::size_t>(t)]->value.at(i) ==
            doctest::Approx(p1 * pu).epsilon(1e-6));
    }
  }
}

TEST_CASE("composed output stays inside the convex hull of the heads") {
  auto cfg = small_config(ModelKind::DLEN, 2);
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 19);
  const auto batch = small_batch<double>(schema, 2, 19, 32);
  const auto fwd = model.forward(batch);
  for (int t = 0; t < 2; ++t) {
    for (std::int64_t i = 0; i < batch.size; ++i) {
      const double p1 = fwd.p_given_up[static_cast<std::size_t>(t)]->value.at(i);
      const double p0 = fwd.p_given_not_up[static_cast<std::size_t>(t)]->value.at(i);
      const double c = fwd.task_probs[static_cast<std::size_t>(t)]->value.at(i);
      CHECK(c > std::min(p1, p0));
      CHECK(c < std::max(p1, p0));
    }
  }
}

TEST_CASE("dlen composition matches manual recomposition") {
  auto cfg = small_config(ModelKind::DLEN, 3);
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 23);
  const auto batch = small_batch<double>(schema, 3, 23, 8);
  const auto fwd = model.forward(batch);
  CHECK(fwd.p_up->value.rank() == 1);
  CHECK(fwd.p_up->value.extent(0) == batch.size);
  for (int t = 0; t < 3; ++t) {
    for (std::int64_t i = 0; i < batch.size; ++i) {
      const double p1 = fwd.p_given_up[static_cast<std::size_t>(t)]->value.at(i);
      const double p0 = fwd.p_given_not_up[static_cast<std::size_t>(t)]->value.at(i);
      const double u = fwd.p_up->value.at(i);
      CHECK(fwd.task_probs[static_cast<std::size_t>(t)]->value.at(i) ==
            doctest::Approx(p1 * u + p0 * (1 - u)).epsilon(1e-9));
    }
  }
}

TEST_CASE("negative head is capped by alpha and stays positive") {
  auto cfg = small_config(ModelKind::DLEN, 2);
  cfg.alpha_policy.mode = AlphaMode::RateScaled;
  cfg.alpha_policy.multiplier = 0.5;
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 29);
  model.resolve_alpha({0.1, 0.04});
  CHECK(model.alpha(0) == doctest::Approx(0.05));
  CHECK(model.alpha(1) == doctest::Approx(0.02));

  const auto batch = small_batch<double>(schema, 2, 29, 64);
  const auto fwd = model.forward(batch);
  for (int t = 0; t < 2; ++t) {
    for (std::int64_t i = 0; i < batch.size; ++i) {
      const double p0 = fwd.p_given_not_up[static_cast<std::size_t>(t)]->value.at(i);
      CHECK(p0 > 0.0);
      CHECK(p0 <= model.alpha(t));
    }
  }
}

TEST_CASE("unresolved alpha refuses to run") {
  auto cfg = small_config(ModelKind::DLEN, 2);
  cfg.alpha_policy.mode = AlphaMode::RateScaled;
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 31);
  CHECK_THROWS_AS(model.alpha(0), ModeError);
  const auto batch = small_batch<double>(schema, 2, 31, 4);
  CHECK_THROWS_AS(model.forward(batch), ModeError);
}

TEST_CASE("parameter counts match the config arithmetic") {
  const FeatureSchema schema = small_schema();
  for (const auto kind : {ModelKind::MMOE, ModelKind::CGC, ModelKind::DLEN}) {
    auto cfg = small_config(kind, 3);
    MtlModel<double> model(cfg, schema, 37);
    CHECK(model.store().trainable_scalar_count() == cfg.parameter_count(schema));
  }
  auto raw = small_config(ModelKind::DLEN, 2);
  raw.hidden_state_input = HiddenStateInput::RawFeatures;
  MtlModel<double> model(raw, schema, 37);
  CHECK(model.store().trainable_scalar_count() == raw.parameter_count(schema));
}

TEST_CASE("dlen's positive head reproduces mmoe under shared seeds") {
  const FeatureSchema schema = small_schema();
  auto dlen_cfg = small_config(ModelKind::DLEN, 2);
  dlen_cfg.alpha_policy.fixed_alphas = {1e-9, 1e-9};
  MtlModel<double> dlen(dlen_cfg, schema, 41);
  MtlModel<double> mmoe(small_config(ModelKind::MMOE, 2), schema, 41);
  const auto batch = small_batch<double>(schema, 2, 41, 6);
  const auto fd = dlen.forward(batch);
  const auto fm = mmoe.forward(batch);
  for (int t = 0; t < 2; ++t) {
    for (std::int64_t i = 0; i < batch.size; ++i) {
      CHECK(fd.p_given_up[static_cast<std::size_t>(t)]->value.at(i) ==
            doctest::Approx(fm.task_probs[static_cast<std::size_t>(t)]->value.at(i))
                .epsilon(1e-6));
      // with alpha ~ 0 the composition collapses onto the joint score
      CHECK(fd.task_probs[static_cast<std::size_t>(t)]->value.at(i) <=
            fd.p_up->value.at(i) + 1e-9);
    }
  }
}

TEST_CASE("checkpoint round-trip is bit exact") {
  const FeatureSchema schema = small_schema();
  auto cfg = small_config(ModelKind::DLEN, 2);
  cfg.alpha_policy.mode = AlphaMode::RateScaled;
  const auto dir = std::filesystem::temp_directory_path() / "dlen_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.dlen").string();

  MtlModel<float> trained(cfg, schema, 43);
  trained.resolve_alpha({0.12, 0.03});
  save_checkpoint(trained.store().all(), path);

  MtlModel<float> restored(cfg, schema, 99);
  load_checkpoint(restored.store().all(), path);
  for (std::size_t i = 0; i < trained.store().all().size(); ++i) {
    CHECK(trained.store().all()[i]->value.data() == restored.store().all()[i]->value.data());
  }
  CHECK(restored.alpha(0) == doctest::Approx(0.06));
  CHECK(restored.alpha(1) == doctest::Approx(0.015));

  const std::string again = (dir / "model2.dlen").string();
  save_checkpoint(restored.store().all(), again);
  CHECK(read_bytes(path) == read_bytes(again));

  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects corruption and wrong architecture") {
  const FeatureSchema schema = small_schema();
  const auto dir = std::filesystem::temp_directory_path() / "dlen_ckpt_bad";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.dlen").string();

  MtlModel<float> mmoe(small_config(ModelKind::MMOE, 2), schema, 47);
  save_checkpoint(mmoe.store().all(), path);

  MtlModel<float> cgc(small_config(ModelKind::CGC, 2), schema, 47);
  CHECK_THROWS_AS(load_checkpoint(cgc.store().all(), path), CheckpointError);

  std::string bytes = read_bytes(path);
  bytes[0] = 'X';
  const std::string bad = (dir / "bad.dlen").string();
  std::ofstream(bad, std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(mmoe.store().all(), bad), CheckpointError);

  const std::string truncated = (dir / "trunc.dlen").string();
  std::ofstream(truncated, std::ios::binary) << read_bytes(path).substr(0, 64);
  CHECK_THROWS_AS(load_checkpoint(mmoe.store().all(), truncated), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint(mmoe.store().all(), (dir / "missing.dlen").string()),
                  CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("grad check passes on the full tiny dlen graph") {
  auto cfg = small_config(ModelKind::DLEN, 2);
  const FeatureSchema schema = small_schema();
  MtlModel<double> model(cfg, schema, 53);
  const auto batch = small_batch<double>(schema, 2, 53, 16);
  auto builder = [&]() { return model.loss(model.forward(batch), batch); };
  const auto report = grad_check<double>(builder, model.store().all());
  CHECK(report.max_rel_error < 1e-3);
}
