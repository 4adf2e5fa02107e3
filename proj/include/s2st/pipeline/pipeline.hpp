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

// Run configuration and the training / inference stages behind the CLI.
// Every stage reads its inputs from disk and writes only below its output
// directory; all randomness derives from RunConfig::seed.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2st/data/corpus.hpp"
#include "s2st/duolm/duolm.hpp"
#include "s2st/eval/metrics.hpp"
#include "s2st/flowdec/flowdec.hpp"
#include "s2st/frontend/frontend.hpp"
#include "s2st/fsq/fsq.hpp"

namespace s2st::pipeline {

struct TrainConfig {
  std::size_t warmup_epochs = 3;
  double warmup_lr = 3e-3;
  std::size_t base_epochs = 8;
  double base_lr = 3e-3;
  std::size_t s2st_epochs = 10;
  double s2st_lr = 3e-3;
  double weight_decay = 0.0;
  double final_lr_fraction = 0.1;  // cosine decay floor
  std::size_t batch_size = 16;
  std::size_t flow_epochs = 4;
  double flow_lr = 3e-3;
};

struct DecodeConfig {
  std::size_t max_steps = 64;
  bool greedy = true;
  double temperature = 1.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  data::DataConfig data;
  fsq::TokenizerConfig tokenizer;
  frontend::FrontendConfig frontend;
  duolm::DuoLmConfig duolm;
  flowdec::FlowConfig flow;
  TrainConfig train;
  DecodeConfig decode;

  // Field-level checks of every section, then cross-section agreement.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Missing file is an error; unknown fields anywhere are rejected.
RunConfig load_run_config(const std::filesystem::path& path);

// Derived RNG streams, one per stage.
enum class Stream : std::uint64_t {
  Tokenizer = 10,
  BaseModel,
  Warmup,
  BaseBatches,
  S2stModel,
  S2stBatches,
  FlowModel,
  FlowTrain,
  Synthesis,
};
std::uint64_t stage_seed(const RunConfig& cfg, Stream s);

struct LossRow {
  std::uint64_t step = 0;
  double text = 0.0, audio = 0.0, total = 0.0;
};
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow>& rows);

// Cosine decay from lr to final_fraction * lr over total steps.
double scheduled_lr(double lr, double final_fraction, std::uint64_t step, std::uint64_t total);

// Optional per-step observer, e.g. for progress output.
using Progress = std::function<void(const std::string& stage, std::uint64_t step, std::uint64_t total, double loss)>;

data::CorpusInfo gen_data(const RunConfig& cfg, const std::filesystem::path& out);

fsq::TrainResult train_tokenizer(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                 const std::filesystem::path& out);

// Frontend warm-up followed by speech-to-text training of the base stage.
std::vector<LossRow> pretrain_base(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                   const std::filesystem::path& out, const Progress& progress = {});

// Loads base weights into an adaptation-stage model and trains the
// adaptation set on joint text/speech targets.
std::vector<LossRow> train_s2st(const RunConfig& cfg, const std::filesystem::path& base,
                                const std::filesystem::path& data_dir, const std::filesystem::path& out,
                                const Progress& progress = {});

// Trains the flow decoder on mel targets rendered from the target speech ids.
std::vector<LossRow> train_flow(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out, const Progress& progress = {});

struct TranslateOptions {
  DecodeConfig decode;
  bool wav = false;
  std::uint64_t seed = 1;
};

// Writes <out>/predictions.jsonl; with wav, <out>/wav/<id>.wav and
// <out>/mel/ (container of kind "mel").
std::vector<eval::Prediction> translate(const std::filesystem::path& model, const std::filesystem::path& flow,
                                        const std::filesystem::path& manifest, const std::filesystem::path& out,
                                        const TranslateOptions& opts);

// Scores <pred>/predictions.jsonl against a manifest; the transcriber comes
// from the corpus the manifest belongs to. Writes report.json and report.csv.
eval::EvalReport evaluate(const std::filesystem::path& pred, const std::filesystem::path& ref_manifest,
                          const std::filesystem::path& out);

inline constexpr const char* kPredictionsFile = "predictions.jsonl";
inline constexpr const char* kLossFile = "loss.csv";

}  // namespace s2st::pipeline
