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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "s2st/numerics/rng.hpp"
#include "s2st/numerics/tensor.hpp"

namespace s2st::num {

// Named parameter leaves in insertion order. Modules register their weights
// here; the trainable set is whatever has requires_grad after a freeze policy
// has been applied.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t numel() const;

  // Replaces the values of an existing parameter (shape must match).
  void assign(const std::string& name, std::span<const double> values);

  void set_trainable(const std::function<bool(const std::string&)>& predicate);
  std::vector<std::string> trainable_names() const;
  std::vector<Tensor> trainable() const;
  void zero_grad();

  std::map<std::string, std::vector<double>> snapshot() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> index_;
};

namespace init {
Tensor normal(Rng& rng, Shape shape, double stddev);
Tensor uniform(Rng& rng, Shape shape, double bound);
Tensor constant(Shape shape, double value);
}  // namespace init

}  // namespace s2st::num
