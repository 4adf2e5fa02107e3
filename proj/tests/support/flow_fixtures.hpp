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

// Flow-decoder fixtures shared by unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "s2st/flowdec/flowdec.hpp"

namespace s2st::testing {

inline flowdec::FlowConfig small_flow() {
  flowdec::FlowConfig c;
  c.chunk_size = 3;
  c.frames_per_token = 2;
  c.n_mels = 4;
  c.lookback_frames = 2;
  c.cond_dim = 4;
  c.hidden = 32;
  c.n_tokens = 7;
  return c;
}

struct PointMassResult {
  double max_mean_error = 0.0;  // over classes and entries
  double max_std = 0.0;
  double final_loss = 0.0;
};

// Trains the flow network on one fixed target chunk per token (a point mass
// per conditioning class) and measures 256 seeded samples of each class.
inline PointMassResult point_mass_experiment(std::size_t steps = 1500, std::size_t draws = 256) {
  using namespace s2st::num;
  flowdec::FlowConfig cfg = small_flow();
  cfg.chunk_size = 1;
  cfg.n_tokens = 3;
  cfg.hidden = 64;
  flowdec::FlowModel model(cfg, 5);
  const auto table = flowdec::make_mel_table(cfg, 1, 6);
  const auto speaker = flowdec::make_speaker_prompt(cfg, 0, 7);
  std::vector<flowdec::CfmExample> batch;
  for (int tok = 0; tok < static_cast<int>(cfg.n_tokens); ++tok) {
    const std::vector<int> ids{tok};
    auto ex = flowdec::chunk_examples(cfg, ids, table.render(ids, 0), speaker);
    batch.insert(batch.end(), ex.begin(), ex.end());
  }
  AdamWConfig oc;
  oc.lr = 3e-3;
  AdamW opt(model.params().trainable(), oc);
  Rng rng(8);
  PointMassResult res;
  // Repeat the classes so each step sees several noise draws per class.
  std::vector<flowdec::CfmExample> big;
  for (int r = 0; r < 16; ++r) big.insert(big.end(), batch.begin(), batch.end());
  for (std::size_t s = 0; s < steps; ++s) {
    Tensor loss = flowdec::cfm_loss(big, rng, model.field());
    opt.zero_grad();
    backward(loss);
    opt.step();
    res.final_loss = loss.item();
  }
  for (const auto& ex : batch) {
    const std::size_t n = ex.x1.size();
    std::vector<double> sum(n, 0.0), sq(n, 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
      Rng draw(Rng::derive(100, d));
      const Tensor x = flowdec::cfm_sample(ex.cond, ex.x1.rows(), cfg.n_mels, draw, cfg.ode_steps, model.field());
      for (std::size_t i = 0; i < n; ++i) {
        sum[i] += x.at(i);
        sq[i] += x.at(i) * x.at(i);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double mean = sum[i] / draws;
      const double var = std::max(0.0, sq[i] / draws - mean * mean);
      res.max_mean_error = std::max(res.max_mean_error, std::abs(mean - ex.x1.at(i)));
      res.max_std = std::max(res.max_std, std::sqrt(var));
    }
  }
  return res;
}

}  // namespace s2st::testing
