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

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace s2st::num {

// Seeded stream over std::mt19937_64, whose output sequence is fixed by the
// standard. Floating draws are built from raw 64-bit words here rather than
// <random> distributions, which are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // Deterministic child seed for (seed, stream); splitmix64 finalizer.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);
  Rng split(std::uint64_t stream) const { return Rng(derive(seed_, stream)); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  double uniform();                  // [0, 1), 53 random bits
  double normal();                   // Box-Muller, one value per two uniforms
  std::size_t below(std::size_t n);  // uniform integer in [0, n), unbiased

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace s2st::num
