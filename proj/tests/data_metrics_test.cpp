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
#include <filesystem>
#include <fstream>
#include <vector>

#include "dlen/data.hpp"
#include "dlen/metrics.hpp"
#include "dlen/rng.hpp"
#include "dlen/synth.hpp"

using namespace dlen;

namespace {

// O(n^2) pairwise AUC with ties counted half, straight from the definition.
double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / static_cast<double>(pairs);
}

DatasetSchema two_task_schema() {
  DatasetSchema s;
  s.task_names = {"click", "like"};
  s.features.categorical_fields = {{"item", 10, 4}};
  s.features.numeric_fields = {"age"};
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("tsv loads known cells exactly") {
  const auto dir = temp_dir("dlen_tsv_known");
  const std::string path = (dir / "data.tsv").string();
  std::ofstream(path) << "label:click\tlabel:like\tcat:item\tnum:age\n"
                      << "1\t0\t3\t2.5\n"
                      << "0\t1\t9\t-0.125\n";
  const Dataset ds = load_tsv(path, two_task_schema());
  CHECK(ds.n_rows() == 2);
  CHECK(ds.labels[0][0] == 1.0f);
  CHECK(ds.labels[1][0] == 0.0f);
  CHECK(ds.labels[0][1] == 0.0f);
  CHECK(ds.labels[1][1] == 1.0f);
  CHECK(ds.cat[0][0] == 3);
  CHECK(ds.cat[0][1] == 9);
  CHECK(ds.num[0][0] == 2.5f);
  CHECK(ds.num[0][1] == -0.125f);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tsv header mismatch names the offending column") {
  const auto dir = temp_dir("dlen_tsv_header");
  const std::string path = (dir / "data.tsv").string();
  std::ofstream(path) << "label:click\tlabel:wrong\tcat:item\tnum:age\n"
                      << "1\t0\t3\t2.5\n";
  try {
    load_tsv(path, two_task_schema());
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("label:like") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("tsv rejects bad labels and out-of-vocabulary ids") {
  const auto dir = temp_dir("dlen_tsv_bad");
  const std::string bad_label = (dir / "label.tsv").string();
  std::ofstream(bad_label) << "label:click\tlabel:like\tcat:item\tnum:age\n"
                           << "2\t0\t3\t2.5\n";
  CHECK_THROWS_AS(load_tsv(bad_label, two_task_schema()), IoError);

  const std::string oov = (dir / "oov.tsv").string();
  std::ofstream(oov) << "label:click\tlabel:like\tcat:item\tnum:age\n"
                     << "1\t0\t10\t2.5\n";
  try {
    load_tsv(oov, two_task_schema());
    FAIL("expected an error");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("item") != std::string::npos);
    CHECK(msg.find("10") != std::string::npos);
  }

  const std::string short_row = (dir / "short.tsv").string();
  std::ofstream(short_row) << "label:click\tlabel:like\tcat:item\tnum:age\n"
                           << "1\t0\t3\n";
  CHECK_THROWS_AS(load_tsv(short_row, two_task_schema()), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generated dataset round-trips through tsv exactly") {
  GeneratorConfig cfg;
  cfg.n_samples = 500;
  cfg.categorical_fields = {{"item", 20, 4}};
  cfg.numeric_fields = {"a", "b"};
  cfg.tasks = {{"click", 0.5, 0.01, 0.6}, {"like", 0.2, 0.005, 0.6}};
  const Generated gen = generate(cfg, 7);

  const auto dir = temp_dir("dlen_tsv_roundtrip");
  const std::string path = (dir / "data.tsv").string();
  save_tsv(gen.data, path);
  const Dataset loaded = load_tsv(path, gen.data.schema);
  CHECK(loaded.labels == gen.data.labels);
  CHECK(loaded.cat == gen.data.cat);
  CHECK(loaded.num == gen.data.num);

  const std::string sc_path = (dir / "sidecar.tsv").string();
  save_sidecar(gen.sidecar, sc_path);
  const Sidecar sc = load_sidecar(sc_path);
  CHECK(sc.sample_index == gen.sidecar.sample_index);
  CHECK(sc.latent_u == gen.sidecar.latent_u);
  CHECK(sc.true_posterior == gen.sidecar.true_posterior);
  std::filesystem::remove_all(dir);
}

TEST_CASE("row split is deterministic and close to one in ten") {
  const std::int64_t n = 100000;
  const SplitIndices a = split_rows(n, 1);
  const SplitIndices b = split_rows(n, 1);
  CHECK(a.eval == b.eval);
  CHECK(a.train.size() + a.eval.size() == static_cast<std::size_t>(n));
  const double frac = static_cast<double>(a.eval.size()) / static_cast<double>(n);
  CHECK(frac > 0.08);
  CHECK(frac < 0.12);
  const SplitIndices c = split_rows(n, 2);
  CHECK(a.eval != c.eval);
}

TEST_CASE("auc on separated, worked, and tied inputs") {
  CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(auc({0.1, 0.2}, {1, 1}), NumericError);
  CHECK_THROWS_AS(auc({0.1, 0.2}, {0, 2}), NumericError);
  CHECK_THROWS_AS(auc({0.1}, {0, 1}), ShapeError);
}

TEST_CASE("auc equals the pairwise oracle on a thousand random instances") {
  Rng rng = Rng::stream(1, "auc");
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(99);
    std::vector<double> scores;
    std::vector<int> labels;
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < n; ++i) {
      // coarse grid so ties actually occur
      scores.push_back(static_cast<double>(rng.uniform_int(8)) / 8.0);
      const int y = rng.bernoulli(0.4) ? 1 : 0;
      labels.push_back(y);
      (y ? has1 : has0) = true;
    }
    if (!has0) labels[0] = 0;
    if (!has1) labels[n - 1] = 1;
    CHECK(auc(scores, labels) == pairwise_auc(scores, labels));
  }
}

TEST_CASE("auc ignores strictly increasing score transforms") {
  Rng rng = Rng::stream(2, "auc.mono");
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    scores.push_back(rng.normal());
    labels.push_back(rng.bernoulli(0.3) ? 1 : 0);
  }
  labels[0] = 0;
  labels[1] = 1;
  std::vector<double> mapped;
  for (double s : scores) mapped.push_back(std::exp(0.5 * s) + 3.0);
  CHECK(auc(scores, labels) == auc(mapped, labels));
}

TEST_CASE("any-interaction label is the or over tasks") {
  Dataset ds;
  ds.schema = two_task_schema();
  ds.labels = {{0, 0, 1, 1}, {0, 1, 0, 1}};
  ds.cat = {{0, 0, 0, 0}};
  ds.num = {{0, 0, 0, 0}};
  const std::vector<std::int64_t> rows{0, 1, 2, 3};
  CHECK(any_interaction_labels(ds, rows) == std::vector<int>{0, 1, 1, 1});

  double max_rate = 0;
  for (const auto& task : ds.labels) {
    double rate = 0;
    for (float v : task) rate += v;
    max_rate = std::max(max_rate, rate / 4.0);
  }
  const auto or_labels = any_interaction_labels(ds, rows);
  double or_rate = 0;
  for (int v : or_labels) or_rate += v;
  CHECK(or_rate / 4.0 >= max_rate);
}

TEST_CASE("constant latent scores give auc one half") {
  Dataset ds;
  ds.schema = two_task_schema();
  ds.labels = {{0, 0, 1, 1}, {0, 0, 0, 0}};
  ds.cat = {{0, 0, 0, 0}};
  ds.num = {{0, 0, 0, 0}};
  const std::vector<std::int64_t> rows{0, 1, 2, 3};
  CHECK(latent_auc({0.3, 0.3, 0.3, 0.3}, ds, rows) == 0.5);
}

TEST_CASE("mtl gain worked examples") {
  AucReport model;
  model.tasks = {{"click", 0.7532, 10, 90}, {"ctr", 0.6245, 5, 95}};
  AucReport baseline;
  baseline.tasks = {{"click", 0.7516, 10, 90}, {"ctr", 0.6231, 5, 95}};
  const auto gains = mtl_gain(model, baseline);
  CHECK(gains.tasks[0].gain == doctest::Approx(0.0016).epsilon(1e-9));
  CHECK(gains.tasks[1].gain == doctest::Approx(0.0014).epsilon(1e-9));

  const auto zero = mtl_gain(model, model);
  CHECK(zero.tasks[0].gain == 0.0);
  CHECK(zero.tasks[1].gain == 0.0);
}

TEST_CASE("metrics tsv writer emits section, key, value rows") {
  const auto dir = temp_dir("dlen_metrics_tsv");
  const std::string path = (dir / "m.tsv").string();
  write_metrics_tsv({{"latent", "auc", 0.75}}, path);
  std::ifstream f(path);
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  CHECK(header == "section\tkey\tvalue");
  CHECK(row.find("latent\tauc\t0.75") == 0);
  std::filesystem::remove_all(dir);
}
