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

#include "s2st/numerics/params.hpp"

#include <algorithm>
#include <stdexcept>

namespace s2st::num {

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("params: duplicate parameter '" + name + "'");
  if (!value.node()->is_leaf) throw std::invalid_argument("params: '" + name + "' is not a leaf");
  value.set_requires_grad(true);
  order_.push_back(name);
  index_.emplace(name, value);
  return value;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("params: no parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : index_) n += t.size();
  return n;
}

void ParamStore::assign(const std::string& name, std::span<const double> values) {
  Tensor t = get(name);
  if (values.size() != t.size()) {
    throw ShapeError("params: '" + name + "' expects " + std::to_string(t.size()) + " values, got " +
                     std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), t.mutable_values().begin());
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& predicate) {
  for (const auto& name : order_) index_.at(name).set_requires_grad(predicate(name));
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& name : order_) {
    if (index_.at(name).requires_grad()) out.push_back(name);
  }
  return out;
}

std::vector<Tensor> ParamStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& name : order_) {
    if (index_.at(name).requires_grad()) out.push_back(index_.at(name));
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : index_) t.zero_grad();
}

std::map<std::string, std::vector<double>> ParamStore::snapshot() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : index_) out.emplace(name, std::vector<double>(t.values().begin(), t.values().end()));
  return out;
}

namespace init {

Tensor normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * stddev;
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor uniform(Rng& rng, Shape shape, double bound) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor constant(Shape shape, double value) { return Tensor::full(std::move(shape), value); }

}  // namespace init

}  // namespace s2st::num
