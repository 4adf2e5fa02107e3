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
#include "s2st/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace s2st::num {

namespace {
double evaluate(const ScalarFn& fn, std::span<const Tensor> inputs) {
  const double y = fn(inputs).item();
  if (!std::isfinite(y)) throw NumericError("grad_check: non-finite function value");
  return y;
}
}  // namespace

GradCheckResult grad_check_detailed(const ScalarFn& fn, std::vector<Tensor> inputs, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(fn(inputs));

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> analytic(inputs[i].size(), 0.0);
    if (inputs[i].has_grad()) std::copy(inputs[i].grad().begin(), inputs[i].grad().end(), analytic.begin());
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + eps;
      const double up = evaluate(fn, inputs);
      values[j] = saved - eps;
      const double down = evaluate(fn, inputs);
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[j] - numeric) / denom;
      if (rel > result.max_rel_error || (i == 0 && j == 0)) {
        result = {rel, i, j, analytic[j], numeric};
      }
    }
  }
  return result;
}

}  // namespace s2st::num
