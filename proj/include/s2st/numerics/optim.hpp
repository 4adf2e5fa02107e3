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
#include <vector>

#include "s2st/numerics/tensor.hpp"

namespace s2st::num {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

// One AdamW update with decoupled weight decay over the registered params.
// A param without a gradient is treated as having a zero gradient.
void adamw_step(std::vector<Tensor>& params, OptimizerState& state, const AdamWConfig& config);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  void step() { adamw_step(params_, state_, config_); }
  void zero_grad();
  void set_lr(double lr) { config_.lr = lr; }
  const AdamWConfig& config() const { return config_; }
  const OptimizerState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  OptimizerState state_;
};

}  // namespace s2st::num
