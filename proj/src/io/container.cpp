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
#include "s2st/io/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace s2st::io {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> encode_le(const std::vector<ArrayEntry>& arrays) {
  std::size_t total = 0;
  for (const auto& a : arrays) total += a.values.size() * 8;
  std::vector<std::uint8_t> out(total);
  std::size_t at = 0;
  for (const auto& a : arrays) {
    for (double v : a.values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out[at++] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
  return out;
}

double decode_le(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
  return std::bit_cast<double>(bits);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Container::add(const std::string& name, num::Shape shape, std::vector<double> values) {
  if (find(name)) throw std::invalid_argument("container: duplicate array '" + name + "'");
  if (num::shape_numel(shape) != values.size()) {
    throw num::ShapeError("container: array '" + name + "' shape " + num::shape_str(shape) + " holds " +
                          std::to_string(values.size()) + " values");
  }
  std::uint64_t offset = 0;
  if (!arrays.empty()) offset = arrays.back().offset + arrays.back().values.size() * 8;
  arrays.push_back({name, std::move(shape), offset, std::move(values)});
}

const ArrayEntry* Container::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const ArrayEntry& Container::get(const std::string& name) const {
  const ArrayEntry* a = find(name);
  if (!a) throw FormatError("container '" + kind + "': missing array '" + name + "'");
  return *a;
}

void save_container(const fs::path& dir, const Container& c) {
  fs::create_directories(dir);
  const auto payload = encode_le(c.arrays);
  nlohmann::json meta;
  meta["format"] = "s2st-container";
  meta["version"] = 1;
  meta["kind"] = c.kind;
  meta["step"] = c.step;
  meta["config"] = c.config;
  meta["trainable"] = c.trainable;
  auto& manifest = meta["arrays"] = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    manifest.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", a.offset}, {"bytes", a.values.size() * 8}});
  }
  meta["payload_bytes"] = payload.size();
  meta["checksum"] = "fnv1a64:" + hex64(fnv1a64(payload.data(), payload.size()));

  std::ofstream bin(dir / kParamsFile, std::ios::binary | std::ios::trunc);
  if (!bin) throw FormatError("container: cannot write " + (dir / kParamsFile).string());
  bin.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  std::ofstream js(dir / kMetaFile, std::ios::trunc);
  if (!js) throw FormatError("container: cannot write " + (dir / kMetaFile).string());
  js << meta.dump(1) << '\n';
}

Container load_container(const fs::path& dir, std::optional<std::string> expected_kind) {
  std::ifstream js(dir / kMetaFile);
  if (!js) throw FormatError("container: cannot open " + (dir / kMetaFile).string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("container: malformed " + (dir / kMetaFile).string() + ": " + e.what());
  }
  if (meta.value("format", "") != "s2st-container") {
    throw FormatError("container: " + dir.string() + " is not an s2st container");
  }
  Container c;
  c.kind = meta.at("kind").get<std::string>();
  if (expected_kind && c.kind != *expected_kind) {
    throw FormatError("container: " + dir.string() + " has kind '" + c.kind + "', expected '" + *expected_kind +
                      "'");
  }
  c.step = meta.at("step").get<std::uint64_t>();
  c.config = meta.at("config");
  c.trainable = meta.at("trainable").get<std::vector<std::string>>();

  std::ifstream bin(dir / kParamsFile, std::ios::binary);
  if (!bin) throw FormatError("container: cannot open " + (dir / kParamsFile).string());
  std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (payload.size() != meta.at("payload_bytes").get<std::size_t>()) {
    throw FormatError("container: " + dir.string() + " payload is " + std::to_string(payload.size()) +
                      " bytes, manifest says " + meta.at("payload_bytes").dump());
  }
  const std::string checksum = "fnv1a64:" + hex64(fnv1a64(payload.data(), payload.size()));
  if (checksum != meta.at("checksum").get<std::string>()) {
    throw FormatError("container: " + dir.string() + " checksum mismatch (corrupted arrays)");
  }
  std::uint64_t expected_offset = 0;
  for (const auto& entry : meta.at("arrays")) {
    ArrayEntry a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<num::Shape>();
    a.offset = entry.at("offset").get<std::uint64_t>();
    const auto bytes = entry.at("bytes").get<std::uint64_t>();
    if (a.offset != expected_offset || bytes != num::shape_numel(a.shape) * 8 || a.offset + bytes > payload.size()) {
      throw FormatError("container: " + dir.string() + " manifest entry '" + a.name + "' is inconsistent");
    }
    a.values.resize(bytes / 8);
    for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = decode_le(payload.data() + a.offset + 8 * i);
    expected_offset += bytes;
    c.arrays.push_back(std::move(a));
  }
  if (expected_offset != payload.size()) throw FormatError("container: " + dir.string() + " has trailing bytes");
  return c;
}

Container container_from_store(const num::ParamStore& store, const std::string& kind, std::uint64_t step,
                               nlohmann::json config) {
  Container c;
  c.kind = kind;
  c.step = step;
  c.config = std::move(config);
  c.trainable = store.trainable_names();
  for (const auto& name : store.names()) {
    const auto t = store.get(name);
    c.add(name, t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
  }
  return c;
}

void restore_store(num::ParamStore& store, const Container& c) {
  const auto seen = restore_subset(store, c);
  for (const auto& name : store.names()) {
    if (!seen.count(name)) throw FormatError("checkpoint: missing array '" + name + "'");
  }
}

std::set<std::string> restore_subset(num::ParamStore& store, const Container& c) {
  std::set<std::string> seen;
  for (const auto& a : c.arrays) {
    if (!store.contains(a.name)) throw FormatError("checkpoint: unexpected array '" + a.name + "'");
    if (store.get(a.name).shape() != a.shape) {
      throw FormatError("checkpoint: array '" + a.name + "' has shape " + num::shape_str(a.shape) + ", model expects " +
                        num::shape_str(store.get(a.name).shape()));
    }
    store.assign(a.name, a.values);
    seen.insert(a.name);
  }
  return seen;
}

}  // namespace s2st::io
