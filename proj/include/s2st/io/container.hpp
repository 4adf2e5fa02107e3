// Copyright 2026 The s2st-desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Array container shared by checkpoints, feature shards and mel dumps: a
// directory holding meta.json (kind, step, config, array manifest with
// shapes and byte offsets, trainable listing, checksum) and params.bin
// (little-endian f64 arrays concatenated in manifest order).

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2st/numerics/params.hpp"

namespace s2st::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ArrayEntry {
  std::string name;
  num::Shape shape;
  std::uint64_t offset = 0;  // bytes into params.bin
  std::vector<double> values;
};

struct Container {
  std::string kind;
  std::uint64_t step = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> trainable;
  std::vector<ArrayEntry> arrays;

  void add(const std::string& name, num::Shape shape, std::vector<double> values);
  const ArrayEntry& get(const std::string& name) const;
  const ArrayEntry* find(const std::string& name) const;
};

inline constexpr const char* kMetaFile = "meta.json";
inline constexpr const char* kParamsFile = "params.bin";

void save_container(const std::filesystem::path& dir, const Container& c);
// Throws FormatError on a kind mismatch, truncated or corrupted arrays, or a
// manifest that disagrees with the payload.
Container load_container(const std::filesystem::path& dir, std::optional<std::string> expected_kind = {});

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

// Parameter-store bridges. Every store entry is written with its trainable
// flag; restore requires the exact same name set and shapes.
Container container_from_store(const num::ParamStore& store, const std::string& kind, std::uint64_t step,
                               nlohmann::json config);
void restore_store(num::ParamStore& store, const Container& c);
// Every container array must exist in the store; store entries not in the
// container are left as they are. Returns the names restored.
std::set<std::string> restore_subset(num::ParamStore& store, const Container& c);

}  // namespace s2st::io
