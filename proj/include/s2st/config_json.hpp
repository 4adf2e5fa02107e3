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

// Strict JSON section reader: rejects keys absent from the defaults and
// reports type errors with the section-qualified field name.

#pragma once

#include <string>

#include <json.hpp>

#include "s2st/types.hpp"

namespace s2st {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, const nlohmann::json& defaults, std::string section)
      : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError(section_ + ": expected an object");
    for (const auto& [key, _] : j.items()) {
      if (!defaults.contains(key)) throw ConfigError(section_ + "." + key + ": unknown field");
    }
  }

  template <class T>
  void operator()(const char* key, T& field) const {
    if (!j_.contains(key)) return;
    try {
      j_.at(key).get_to(field);
    } catch (const ConfigError&) {
      throw;  // nested sections name their own fields
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(section_ + "." + key + ": wrong type");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string section_;
};

}  // namespace s2st
