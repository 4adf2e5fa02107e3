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
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace s2st {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Text ids: content tokens first, then specials.
struct TextVocab {
  std::size_t content = 0;
  int bos() const { return static_cast<int>(content); }
  int eos() const { return static_cast<int>(content) + 1; }
  int pad() const { return static_cast<int>(content) + 2; }
  int unk() const { return static_cast<int>(content) + 3; }
  int instruction() const { return static_cast<int>(content) + 4; }
  std::size_t size() const { return content + 5; }
  bool is_content(int id) const { return id >= 0 && id < static_cast<int>(content); }
};

// Audio ids: the speech codebook, then specials at the top of the range.
struct AudioVocab {
  std::size_t codebook = 0;
  int bos() const { return static_cast<int>(codebook); }
  int eos() const { return static_cast<int>(codebook) + 1; }
  int pad() const { return static_cast<int>(codebook) + 2; }
  std::size_t size() const { return codebook + 3; }
  bool is_content(int id) const { return id >= 0 && id < static_cast<int>(codebook); }
};

// T x F feature frames in row-major order.
struct AudioFeatureSeq {
  std::size_t frames = 0;
  std::size_t dim = 0;
  double frame_rate_hz = 50.0;
  std::vector<double> values;

  void validate(std::size_t expected_dim) const;
};

}  // namespace s2st
