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

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dlen/models.hpp"
#include "dlen/rng.hpp"
#include "dlen/tensor.hpp"

namespace dlen {

// Dataset files are UTF-8 TSV with a header row. Task label columns are named
// `label:<task>` and hold 0/1; categorical columns `cat:<field>` hold
// non-negative integer ids; numeric columns `num:<field>` hold decimal
// floats. Column order is labels, categoricals, numerics, each in schema
// declaration order. Floats are written with %.9g so a write/load round-trip
// is value-exact.

struct DatasetSchema {
  std::vector<std::string> task_names;
  FeatureSchema features;

  void validate() const {
    if (task_names.empty()) throw ConfigError("dataset schema has no tasks");
    std::unordered_set<std::string> seen;
    for (const auto& t : task_names) {
      if (t.empty()) throw ConfigError("empty task name in dataset schema");
      if (!seen.insert(t).second) throw ConfigError("duplicate task name: " + t);
    }
    features.validate();
  }

  std::vector<std::string> header_columns() const {
    std::vector<std::string> cols;
    for (const auto& t : task_names) cols.push_back("label:" + t);
    for (const auto& f : features.categorical_fields) cols.push_back("cat:" + f.name);
    for (const auto& n : features.numeric_fields) cols.push_back("num:" + n);
    return cols;
  }
};

/// Column-major in-memory dataset; row order matches the file.
struct Dataset {
  DatasetSchema schema;
  std::vector<std::vector<float>> labels;      // [task][row], each 0 or 1
  std::vector<std::vector<std::int32_t>> cat;  // [field][row]
  std::vector<std::vector<float>> num;         // [field][row]

  std::int64_t n_rows() const {
    if (!labels.empty()) return static_cast<std::int64_t>(labels[0].size());
    return 0;
  }
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

inline IoError cell_error(const std::string& path, std::size_t line_no, const std::string& what) {
  return IoError(path + ":" + std::to_string(line_no) + ": " + what);
}

template <typename Num>
Num parse_number(const std::string& cell, const std::string& path, std::size_t line_no,
                 const std::string& column) {
  Num value{};
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || cell.empty()) {
    throw cell_error(path, line_no, "cannot parse '" + cell + "' in column " + column);
  }
  return value;
}

inline std::string format_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

inline std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_tsv(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  const auto cols = ds.schema.header_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) f << (c ? "\t" : "") << cols[c];
  f << "\n";
  const std::int64_t rows = ds.n_rows();
  for (std::int64_t r = 0; r < rows; ++r) {
    bool first = true;
    for (const auto& col : ds.labels) {
      f << (first ? "" : "\t") << (col[static_cast<std::size_t>(r)] != 0 ? '1' : '0');
      first = false;
    }
    for (const auto& col : ds.cat) {
      f << (first ? "" : "\t") << col[static_cast<std::size_t>(r)];
      first = false;
    }
    for (const auto& col : ds.num) {
      f << (first ? "" : "\t") << detail::format_float(col[static_cast<std::size_t>(r)]);
      first = false;
    }
    f << "\n";
  }
  if (!f) throw IoError("failed writing: " + path);
}

inline Dataset load_tsv(const std::string& path, const DatasetSchema& schema) {
  schema.validate();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);

  Dataset ds;
  ds.schema = schema;
  ds.labels.resize(schema.task_names.size());
  ds.cat.resize(schema.features.categorical_fields.size());
  ds.num.resize(schema.features.numeric_fields.size());

  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty file, expected a header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto expected = schema.header_columns();
  const auto header = detail::split_tabs(line);
  if (header.size() != expected.size()) {
    throw IoError(path + ": header has " + std::to_string(header.size()) + " columns, schema needs " +
                  std::to_string(expected.size()));
  }
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (header[c] != expected[c]) {
      throw IoError(path + ": header column " + std::to_string(c + 1) + " is '" + header[c] +
                    "', expected '" + expected[c] + "'");
    }
  }

  const std::size_t n_labels = ds.labels.size();
  const std::size_t n_cat = ds.cat.size();
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_tabs(line);
    if (cells.size() != expected.size()) {
      throw detail::cell_error(path, line_no,
                               "row has " + std::to_string(cells.size()) + " cells, expected " +
                                   std::to_string(expected.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c < n_labels) {
        const int v = detail::parse_number<int>(cells[c], path, line_no, expected[c]);
        if (v != 0 && v != 1) {
          throw detail::cell_error(path, line_no, "label must be 0 or 1 in column " + expected[c]);
        }
        ds.labels[c].push_back(static_cast<float>(v));
      } else if (c < n_labels + n_cat) {
        const std::size_t fidx = c - n_labels;
        const auto& field = schema.features.categorical_fields[fidx];
        const auto id = detail::parse_number<std::int32_t>(cells[c], path, line_no, expected[c]);
        if (id < 0 || id >= field.vocab_size) {
          throw detail::cell_error(path, line_no,
                                   "id " + std::to_string(id) + " out of vocabulary (size " +
                                       std::to_string(field.vocab_size) + ") for field '" +
                                       field.name + "'");
        }
        ds.cat[fidx].push_back(id);
      } else {
        const std::size_t fidx = c - n_labels - n_cat;
        ds.num[fidx].push_back(detail::parse_number<float>(cells[c], path, line_no, expected[c]));
      }
    }
  }
  return ds;
}

/// Ground-truth sidecar: one row per sample with the hidden latent state and
/// the generating posterior. Never merged into the training file.
struct Sidecar {
  std::vector<std::int64_t> sample_index;
  std::vector<int> latent_u;
  std::vector<double> true_posterior;

  std::int64_t n_rows() const { return static_cast<std::int64_t>(sample_index.size()); }
};

inline void save_sidecar(const Sidecar& sc, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "sample_index\tlatent_u\ttrue_posterior\n";
  for (std::size_t i = 0; i < sc.sample_index.size(); ++i) {
    f << sc.sample_index[i] << "\t" << sc.latent_u[i] << "\t"
      << detail::format_double(sc.true_posterior[i]) << "\n";
  }
  if (!f) throw IoError("failed writing: " + path);
}

inline Sidecar load_sidecar(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty file, expected a header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sample_index\tlatent_u\ttrue_posterior") {
    throw IoError(path + ": unexpected sidecar header");
  }
  Sidecar sc;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_tabs(line);
    if (cells.size() != 3) throw detail::cell_error(path, line_no, "expected 3 cells");
    sc.sample_index.push_back(
        detail::parse_number<std::int64_t>(cells[0], path, line_no, "sample_index"));
    const int u = detail::parse_number<int>(cells[1], path, line_no, "latent_u");
    if (u != 0 && u != 1) throw detail::cell_error(path, line_no, "latent_u must be 0 or 1");
    sc.latent_u.push_back(u);
    sc.true_posterior.push_back(
        detail::parse_number<double>(cells[2], path, line_no, "true_posterior"));
  }
  return sc;
}

/// Deterministic 90/10 train/eval split by sample-index hash with a fixed
/// salt; row content never influences the assignment.
inline bool is_eval_row(std::int64_t index, std::uint64_t salt) {
  std::uint64_t h = static_cast<std::uint64_t>(index) ^ (salt * 0x9E3779B97F4A7C15ULL);
  return splitmix64(h) % 10 == 9;
}

struct SplitIndices {
  std::vector<std::int64_t> train, eval;
};

inline SplitIndices split_rows(std::int64_t n_rows, std::uint64_t salt) {
  SplitIndices s;
  for (std::int64_t i = 0; i < n_rows; ++i) {
    (is_eval_row(i, salt) ? s.eval : s.train).push_back(i);
  }
  return s;
}

/// Assemble rows [begin, end) of `rows` into a model batch.
template <typename T>
Batch<T> make_batch(const Dataset& ds, const std::vector<std::int64_t>& rows, std::size_t begin,
                    std::size_t end) {
  if (begin >= end || end > rows.size()) throw ShapeError("make_batch: bad row range");
  Batch<T> b;
  b.size = static_cast<std::int64_t>(end - begin);
  b.cat.resize(ds.cat.size());
  b.num.resize(ds.num.size());
  b.labels.reserve(ds.labels.size());
  b.row_indices.assign(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                       rows.begin() + static_cast<std::ptrdiff_t>(end));
  for (std::size_t f = 0; f < ds.cat.size(); ++f) {
    b.cat[f].reserve(static_cast<std::size_t>(b.size));
    for (auto r : b.row_indices) b.cat[f].push_back(ds.cat[f][static_cast<std::size_t>(r)]);
  }
  for (std::size_t f = 0; f < ds.num.size(); ++f) {
    b.num[f].reserve(static_cast<std::size_t>(b.size));
    for (auto r : b.row_indices) {
      b.num[f].push_back(static_cast<T>(ds.num[f][static_cast<std::size_t>(r)]));
    }
  }
  for (std::size_t t = 0; t < ds.labels.size(); ++t) {
    Tensor<T> col({b.size});
    for (std::int64_t i = 0; i < b.size; ++i) {
      col.at(i) = static_cast<T>(ds.labels[t][static_cast<std::size_t>(b.row_indices[i])]);
    }
    b.labels.push_back(std::move(col));
  }
  return b;
}

/// Per-task empirical positive rate over the given rows.
inline std::vector<double> positive_rates(const Dataset& ds, const std::vector<std::int64_t>& rows) {
  if (rows.empty()) throw ShapeError("positive_rates: no rows");
  std::vector<double> rates(ds.labels.size(), 0.0);
  for (std::size_t t = 0; t < ds.labels.size(); ++t) {
    std::int64_t pos = 0;
    for (auto r : rows) pos += ds.labels[t][static_cast<std::size_t>(r)] != 0 ? 1 : 0;
    rates[t] = static_cast<double>(pos) / static_cast<double>(rows.size());
  }
  return rates;
}

}  // namespace dlen
