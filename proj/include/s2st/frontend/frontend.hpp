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
// Speech frontend: strided conv subsampling, Conformer encoder with learned
// absolute positions, and a two-layer MLP adapter into the LM width.
//
// Each conv layer unfolds (kernel, stride, pad) windows and applies a linear
// map and SiLU. Output length per layer: floor((T + 2 pad - kernel) / stride) + 1.

#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "s2st/data/corpus.hpp"
#include "s2st/nn/layers.hpp"

namespace s2st::frontend {

using num::Tensor;

struct FrontendConfig {
  std::size_t feat_dim = 16;
  std::vector<std::size_t> conv_strides = {2, 2};
  std::size_t conv_kernel = 3;
  std::size_t conv_pad = 1;
  std::size_t encoder_blocks = 2;
  std::size_t enc_dim = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t conv_module_kernel = 3;
  std::size_t adapter_hidden = 64;
  std::size_t lm_dim = 64;
  std::size_t max_positions = 256;

  void validate() const;
  std::size_t downsample_factor() const;
};

void to_json(nlohmann::json& j, const FrontendConfig& c);
void from_json(const nlohmann::json& j, FrontendConfig& c);

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad);
// Length after the whole conv chain; throws if the input is shorter than the
// configured minimum.
std::size_t subsampled_length(const FrontendConfig& cfg, std::size_t frames);
std::size_t min_input_length(const FrontendConfig& cfg);

class Frontend {
 public:
  Frontend() = default;
  // Registers parameters under "frontend." in store.
  Frontend(const FrontendConfig& cfg, num::ParamStore& store, num::Rng& rng);

  Tensor conv_subsample(const Tensor& frames) const;  // [T, F] -> [T', enc_dim]
  Tensor encode(const Tensor& hidden) const;           // [T', enc_dim]
  Tensor adapt(const Tensor& hidden) const;            // [T', lm_dim]
  Tensor forward(const AudioFeatureSeq& seq) const;

  // Frame classifier used only for the warm-up objective.
  Tensor warmup_logits(const Tensor& adapted) const { return warmup_head_.forward(adapted); }
  void attach_warmup_head(num::ParamStore& store, std::size_t classes, num::Rng& rng);
  const nn::Linear& warmup_head() const { return warmup_head_; }

  // Test hook: adapter applies its two linear maps with no nonlinearity.
  void set_adapter_bypass(bool bypass) { adapter_bypass_ = bypass; }
  const FrontendConfig& config() const { return cfg_; }

 private:
  FrontendConfig cfg_;
  std::vector<nn::Linear> conv_;
  Tensor positions_;
  std::vector<nn::ConformerBlock> blocks_;
  nn::Linear adapter_in_, adapter_out_, warmup_head_;
  bool adapter_bypass_ = false;
};

inline bool is_frontend_param(const std::string& name) { return name.rfind("frontend.", 0) == 0; }

// Label of each subsampled frame: the source token covering its first input frame.
std::vector<int> subsampled_labels(const FrontendConfig& cfg, const data::Utterance& u,
                                   std::size_t frames_per_source_token);

struct WarmupLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

// Frame-classification pretraining of every frontend parameter in store plus
// the attached warm-up head (which may be registered elsewhere).
std::vector<WarmupLog> warmup(Frontend& fe, num::ParamStore& store, const data::Manifest& manifest,
                              data::FeatureStore& features, std::size_t frames_per_source_token, std::size_t epochs,
                              std::size_t batch_utterances, double lr, std::uint64_t seed);

}  // namespace s2st::frontend
