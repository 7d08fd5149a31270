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
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dlen/graph.hpp"

namespace dlen {

// Checkpoint format "DLEN1": the magic line, a plain-text manifest with one
// line per parameter (name, dtype, shape extents, byte offset, byte length,
// all space-separated), a blank line, then the concatenated raw little-endian
// float32 payloads. Offsets are relative to the payload start. Round-trips
// are bit-exact.

inline constexpr char kCheckpointMagic[] = "DLEN1";

namespace detail {

inline void put_le_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline float get_le_f32(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  std::uint32_t bits = static_cast<std::uint32_t>(u[0]) | (static_cast<std::uint32_t>(u[1]) << 8) |
                       (static_cast<std::uint32_t>(u[2]) << 16) |
                       (static_cast<std::uint32_t>(u[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const std::vector<NodePtr<float>>& params) {
  std::string manifest;
  std::string payload;
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    if (p->name.empty()) throw CheckpointError("unnamed parameter cannot be checkpointed");
    const std::uint64_t length = static_cast<std::uint64_t>(p->value.numel()) * 4;
    manifest += p->name;
    manifest += " f32";
    for (auto d : p->value.shape()) manifest += " " + std::to_string(d);
    manifest += " " + std::to_string(offset) + " " + std::to_string(length) + "\n";
    for (float v : p->value.data()) detail::put_le_f32(payload, v);
    offset += length;
  }
  std::string out = std::string(kCheckpointMagic) + "\n";
  out += manifest;
  out += "\n";
  out += payload;
  return out;
}

inline void save_checkpoint(const std::vector<NodePtr<float>>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint file for writing: " + path);
  const std::string blob = serialize_checkpoint(params);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

/// Load a checkpoint into an existing model's parameters. Every manifest
/// entry must match a parameter by name and shape, and vice versa.
inline void load_checkpoint(const std::vector<NodePtr<float>>& params, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint file: " + path);
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  const std::string magic_line = std::string(kCheckpointMagic) + "\n";
  if (blob.size() < magic_line.size() || blob.compare(0, magic_line.size(), magic_line) != 0) {
    throw CheckpointError("bad magic in " + path);
  }

  struct Entry {
    Shape shape;
    std::uint64_t offset, length;
  };
  std::unordered_map<std::string, Entry> entries;
  std::vector<std::string> order;

  std::size_t pos = magic_line.size();
  while (true) {
    const std::size_t eol = blob.find('\n', pos);
    if (eol == std::string::npos) throw CheckpointError("truncated manifest in " + path);
    const std::string line = blob.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) break;  // blank separator before payload

    std::istringstream is(line);
    std::string name, dtype;
    std::vector<std::uint64_t> nums;
    is >> name >> dtype;
    std::uint64_t v;
    while (is >> v) nums.push_back(v);
    if (name.empty() || dtype != "f32" || nums.size() < 3) {
      throw CheckpointError("malformed manifest line: " + line);
    }
    Entry e;
    e.length = nums.back();
    e.offset = nums[nums.size() - 2];
    for (std::size_t i = 0; i + 2 < nums.size(); ++i) {
      e.shape.push_back(static_cast<std::int64_t>(nums[i]));
    }
    if (shape_numel(e.shape) * 4 != static_cast<std::int64_t>(e.length)) {
      throw CheckpointError("length does not match shape for parameter " + name);
    }
    if (entries.count(name)) throw CheckpointError("duplicate parameter in manifest: " + name);
    entries[name] = std::move(e);
    order.push_back(name);
  }

  const std::size_t payload_start = pos;
  if (entries.size() != params.size()) {
    throw CheckpointError("parameter count mismatch: checkpoint has " +
                          std::to_string(entries.size()) + ", model has " +
                          std::to_string(params.size()));
  }
  for (const auto& p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw CheckpointError("model parameter missing from checkpoint: " + p->name);
    const Entry& e = it->second;
    if (e.shape != p->value.shape()) {
      throw CheckpointError("shape mismatch for " + p->name + ": checkpoint " +
                            shape_to_string(e.shape) + " vs model " +
                            shape_to_string(p->value.shape()));
    }
    if (payload_start + e.offset + e.length > blob.size()) {
      throw CheckpointError("payload out of bounds for parameter " + p->name);
    }
    const char* src = blob.data() + payload_start + e.offset;
    auto& data = p->value.data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = detail::get_le_f32(src + i * 4);
  }
}

}  // namespace dlen
