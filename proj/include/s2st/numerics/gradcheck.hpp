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

#include <functional>
#include <span>
#include <vector>

#include "s2st/numerics/tensor.hpp"

namespace s2st::num {

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients against central differences for every entry
// of every input. Relative error per entry is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Inputs must be leaves; their requires_grad flag is forced on during the check
// and their gradients are overwritten.
GradCheckResult grad_check_detailed(const ScalarFn& fn, std::vector<Tensor> inputs, double eps);

inline double grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, double eps) {
  return grad_check_detailed(fn, std::move(inputs), eps).max_rel_error;
}

}  // namespace s2st::num
