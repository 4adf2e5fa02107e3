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
// Dual-stream decoder LM. Shared decoder layers feed a text post-LM and, via a
// linear speech-out map, an audio post-LM. Audio targets lag text by D steps;
// the next input is the mean of the two predicted tokens' embeddings.
//
// Sequence layout per utterance:
//   [instruction embeddings][speech embeddings][step inputs 0..S-1]
// Step 0 input is fuse(BOS_t, BOS_a); step s input is fuse(text[s-1], audio[s-1]).
// Logits are read at the step rows only.
//
// The audio head weight doubles as the audio input embedding table.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2st/frontend/frontend.hpp"
#include "s2st/nn/layers.hpp"
#include "s2st/numerics/optim.hpp"
#include "s2st/types.hpp"

namespace s2st::duolm {

using num::Tensor;

struct DuoLmConfig {
  std::size_t d_model = 64;
  std::size_t n_shared = 2;
  std::size_t n_post = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t text_content = 24;  // V_t = text_content + 5 specials
  std::size_t codebook = 125;     // V_a = codebook + 3 specials
  std::size_t delay = 3;
  double audio_loss_weight = 1.0;
  std::size_t lora_rank = 4;
  double lora_alpha = 8.0;
  std::size_t max_positions = 256;

  void validate() const;
  TextVocab text_vocab() const { return {text_content}; }
  AudioVocab audio_vocab() const { return {codebook}; }
};

void to_json(nlohmann::json& j, const DuoLmConfig& c);
void from_json(const nlohmann::json& j, DuoLmConfig& c);

// ---- joint sequences -------------------------------------------------------

struct JointSequence {
  std::vector<int> text;   // per step: text[s] or PAD_t
  std::vector<int> audio;  // per step: audio[s - D] or PAD_a
  std::size_t length() const { return text.size(); }
};

// Both streams must be non-empty, end with their EOS, and hold only content
// ids before it.
JointSequence build_joint_sequence(std::span<const int> text, std::span<const int> audio, std::size_t delay,
                                   const TextVocab& tv, const AudioVocab& av);

// ---- model -----------------------------------------------------------------

enum class Stage { Base, S2st };
std::string stage_name(Stage s);
Stage parse_stage(const std::string& s);

inline constexpr const char* kCheckpointKind = "duolm";
inline constexpr double kFuseFactor = 0.5;

// Parameters updated in the S2ST stage.
bool is_adaptation_param(const std::string& name);

struct Logits {
  Tensor text;   // [rows, V_t]
  Tensor audio;  // [rows, V_a], undefined for the base stage
};

class DuoLm {
 public:
  DuoLm(const DuoLmConfig& lm, const frontend::FrontendConfig& fe, Stage stage, std::uint64_t seed);

  // Embedding rows.
  Tensor text_embedding(std::span<const int> ids) const;
  Tensor audio_embedding(std::span<const int> ids) const;
  // factor * (E_t(text) + E_a(audio)); the base stage uses E_t(text) alone.
  Tensor fuse(std::span<const int> text, std::span<const int> audio) const;
  Tensor step_inputs(const JointSequence& seq) const;
  Tensor prefix(std::span<const int> instruction, const Tensor& speech) const;

  // Packed causal forward over sequences of the given lengths (rows of x,
  // positions not yet added). Logits are produced for head_rows only.
  Logits forward_packed(const Tensor& x, std::span<const std::size_t> lengths,
                        std::span<const std::size_t> head_rows) const;
  // Single sequence; logits for rows [first_step, rows).
  Logits forward_step(const Tensor& inputs, std::size_t first_step = 0) const;

  // Probe mode: fuse with factor 1, which makes (t, PAD_a) inputs equal to
  // E_t(t) while E_a(PAD_a) = 0.
  void set_fuse_factor(double f) { fuse_factor_ = f; }
  double fuse_factor() const { return fuse_factor_; }

  // Marks the stage's trainable set on the parameter store.
  void apply_freezing_policy(bool train_frontend = false);

  Stage stage() const { return stage_; }
  const DuoLmConfig& config() const { return cfg_; }
  const frontend::FrontendConfig& frontend_config() const { return fe_cfg_; }
  frontend::Frontend& frontend() { return frontend_; }
  const frontend::Frontend& frontend() const { return frontend_; }
  num::ParamStore& params() { return params_; }
  const num::ParamStore& params() const { return params_; }

  // Per-layer attention caches for incremental decoding.
  struct Cache {
    std::vector<nn::KvCache> shared, text_post, audio_post;
    std::size_t length() const { return shared.empty() ? 0 : shared[0].length(); }
  };
  Cache new_cache() const;
  // Appends rows (positions continue from cache length); logits for every
  // appended row.
  Logits extend(const Tensor& rows, Cache& cache) const;

  nlohmann::json config_json() const;
  void save(const std::filesystem::path& dir, std::uint64_t step) const;
  static DuoLm load(const std::filesystem::path& dir);
  // Copies frontend and text-path weights of a base checkpoint.
  void load_base(const std::filesystem::path& dir);

 private:
  Tensor add_positions(const Tensor& x, std::span<const std::size_t> lengths, std::size_t offset) const;

  DuoLmConfig cfg_;
  frontend::FrontendConfig fe_cfg_;
  Stage stage_;
  num::ParamStore params_;
  frontend::Frontend frontend_;
  Tensor text_embed_, positions_, audio_table_;
  std::vector<nn::DecoderBlock> shared_, text_post_, audio_post_;
  nn::LayerNorm text_norm_, audio_norm_;
  nn::Linear text_head_, speech_out_;
  double fuse_factor_ = kFuseFactor;
};

// ---- training ----------------------------------------------------------------

struct Example {
  Tensor speech;                  // [T', d_model] adapter output
  std::vector<int> instruction;   // text ids
  std::vector<int> text;          // ends with EOS_t
  std::vector<int> audio;         // ends with EOS_a; unused in the base stage
};

struct StepLosses {
  double text = 0.0;
  double audio = 0.0;
  double total = 0.0;
};

// Builds the packed loss graph. PAD targets are excluded from both
// cross-entropies; logits of ids that are never valid outputs are masked.
struct LossGraph {
  Tensor text_loss, audio_loss, total;
};
LossGraph compute_loss(const DuoLm& model, const std::vector<Example>& batch);

class Trainer {
 public:
  Trainer(DuoLm& model, const num::AdamWConfig& opt);
  StepLosses step(const std::vector<Example>& batch);
  void set_lr(double lr) { opt_.set_lr(lr); }
  std::uint64_t steps() const { return steps_; }

 private:
  DuoLm& model_;
  num::AdamW opt_;
  std::uint64_t steps_ = 0;
};

// ---- generation ----------------------------------------------------------------

struct GenerateOptions {
  std::size_t max_steps = 64;
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Called with each content audio id as soon as it is chosen.
  std::function<void(int)> on_audio_token;
};

struct Generation {
  std::vector<int> text;   // content ids only
  std::vector<int> audio;  // content ids only
  std::vector<int> raw_text, raw_audio;  // per-step tokens including specials
  bool truncated = false;
};

Generation generate(const DuoLm& model, const Tensor& speech, std::span<const int> instruction,
                    const GenerateOptions& opts);
// Same loop without a KV cache: recomputes the whole prefix every step.
Generation generate_uncached(const DuoLm& model, const Tensor& speech, std::span<const int> instruction,
                             const GenerateOptions& opts);

// Valid output ids: content and EOS.
std::vector<std::uint8_t> invalid_text_outputs(const TextVocab& tv);
std::vector<std::uint8_t> invalid_audio_outputs(const AudioVocab& av);

}  // namespace s2st::duolm
