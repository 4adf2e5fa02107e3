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
// Finite scalar quantization: per-dimension bounding with L/2 * tanh, then
// rounding half away from zero. Codes map to ids in mixed radix with the
// first dimension most significant.

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "s2st/data/corpus.hpp"
#include "s2st/numerics/ops.hpp"
#include "s2st/numerics/params.hpp"

namespace s2st::fsq {

using num::Tensor;

struct FsqConfig {
  std::vector<int> levels = {5, 5, 5};

  void validate() const;
  std::size_t dims() const { return levels.size(); }
  std::size_t codebook_size() const;
  int half(std::size_t j) const { return levels[j] / 2; }
};

struct FsqCode {
  std::vector<int> code;
  int id = 0;
};

int code_to_token(const FsqConfig& cfg, std::span<const int> code);
std::vector<int> token_to_code(const FsqConfig& cfg, int id);
FsqCode quantize(const FsqConfig& cfg, std::span<const double> z);
// Latent whose bounded value sits exactly on the code: atanh(code / half),
// with the saturated ends pulled inside (-1, 1).
std::vector<double> center_latent(const FsqConfig& cfg, std::span<const int> code);

// Differentiable path over rows of z [N, k].
Tensor bound(const FsqConfig& cfg, const Tensor& z);
Tensor quantize_ste(const FsqConfig& cfg, const Tensor& z);  // integer-valued codes

struct TokenizerConfig {
  FsqConfig fsq;
  std::size_t feat_dim = 16;
  std::size_t subsample = 2;  // frames per token
  std::size_t hidden = 32;
  std::size_t head_hidden = 64;
  std::size_t classes = 24;
  std::size_t epochs = 8;
  std::size_t batch_utterances = 16;
  double lr = 1e-2;

  void validate() const;
};

void to_json(nlohmann::json& j, const TokenizerConfig& c);
void from_json(const nlohmann::json& j, TokenizerConfig& c);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double first_loss = 0.0;  // mean over the first 10% of the epoch's batches
  double last_loss = 0.0;   // mean over the last 10%
  double accuracy = 0.0;    // frame accuracy over the corpus after the epoch
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  double final_accuracy = 0.0;
};

inline constexpr const char* kTokenizerKind = "fsq-tokenizer";

// Frames -> stacked pairs -> MLP -> k-dim latent -> FSQ -> id; a small head on
// the normalized code predicts the frame's source token during training.
class Tokenizer {
 public:
  Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed);

  // Tokens = floor(T / subsample).
  std::size_t token_count(std::size_t frames) const { return frames / cfg_.subsample; }
  Tensor latents(const Tensor& frames) const;      // [T', k]
  Tensor class_logits(const Tensor& codes) const;  // [T', classes]
  std::vector<int> tokenize(const AudioFeatureSeq& seq) const;

  bool trained() const { return trained_; }
  std::uint64_t steps() const { return steps_; }
  const TokenizerConfig& config() const { return cfg_; }
  num::ParamStore& params() { return params_; }
  const num::ParamStore& params() const { return params_; }

  void save(const std::filesystem::path& dir) const;
  static Tokenizer load(const std::filesystem::path& dir);

 private:
  friend TrainResult train_tokenizer(Tokenizer&, const data::Manifest&, data::FeatureStore&, std::size_t,
                                     std::uint64_t);
  TokenizerConfig cfg_;
  num::ParamStore params_;
  bool trained_ = false;
  std::uint64_t steps_ = 0;
};

// Frame labels: the source token covering the first frame of each pair.
std::vector<int> frame_labels(const data::Utterance& u, std::size_t frames_per_source_token, std::size_t subsample);
double frame_accuracy(const Tokenizer& tok, const data::Manifest& manifest, data::FeatureStore& features,
                      std::size_t frames_per_source_token);
TrainResult train_tokenizer(Tokenizer& tok, const data::Manifest& manifest, data::FeatureStore& features,
                            std::size_t frames_per_source_token, std::uint64_t seed);

}  // namespace s2st::fsq
