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
#include "s2st/types.hpp"

#include <cmath>

namespace s2st {

void AudioFeatureSeq::validate(std::size_t expected_dim) const {
  if (frames == 0) throw std::invalid_argument("features: empty sequence");
  if (dim != expected_dim) {
    throw std::invalid_argument("features: dimension " + std::to_string(dim) + ", expected " +
                                std::to_string(expected_dim));
  }
  if (values.size() != frames * dim) throw std::invalid_argument("features: value count does not match shape");
  if (!(frame_rate_hz > 0.0)) throw std::invalid_argument("features: frame rate must be positive");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("features: non-finite entry");
  }
}

}  // namespace s2st
