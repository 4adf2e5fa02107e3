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

// Chunked conditional flow-matching decoder from speech ids to mel frames,
// and a deterministic sinusoidal renderer from mel frames to samples.
//
// Each token spans frames_per_token mel frames. Tokens are grouped into
// chunks of chunk_size; a chunk is sampled by Euler integration of a learned
// velocity field conditioned on its tokens, a speaker prompt and the last
// lookback_frames frames already emitted (all zeros before the first chunk).
// Chunk k draws its noise from Rng::derive(utterance_seed, k), so streaming
// and offline decoding agree bit for bit.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "s2st/nn/layers.hpp"
#include "s2st/numerics/optim.hpp"
#include "s2st/types.hpp"

namespace s2st::flowdec {

using num::Tensor;

struct FlowConfig {
  std::size_t chunk_size = 10;
  std::size_t frames_per_token = 2;
  std::size_t n_mels = 16;
  std::size_t ode_steps = 10;
  std::size_t lookback_frames = 4;
  std::size_t cond_dim = 16;
  std::size_t hidden = 128;
  std::size_t n_tokens = 125;  // speech codebook size
  std::size_t n_speakers = 1;
  std::size_t sample_rate = 16000;

  void validate() const;
  std::size_t chunk_frames() const { return chunk_size * frames_per_token; }
  // Width of one velocity-network input row.
  std::size_t input_dim() const;
};

void to_json(nlohmann::json& j, const FlowConfig& c);
void from_json(const nlohmann::json& j, FlowConfig& c);

// Sizes [C, C, ..., rest]; throws on empty input.
std::vector<std::vector<int>> chunk_tokens(std::span<const int> tokens, std::size_t chunk_size);

struct SpeakerPrompt {
  int id = 0;
  std::vector<double> embedding;  // cond_dim
};
// Fixed per-speaker prompt vector drawn from (seed, id).
SpeakerPrompt make_speaker_prompt(const FlowConfig& cfg, int id, std::uint64_t seed);

// Rows-major mel frames [frames, n_mels].
struct MelChunk {
  std::size_t chunk_index = 0;
  std::size_t frames = 0;
  std::vector<double> values;
};

struct ChunkCond {
  std::vector<int> tokens;
  std::vector<double> speaker;   // cond_dim
  std::vector<double> lookback;  // lookback_frames x n_mels, oldest first
};

// Last `lookback_frames` frames of history, zero-padded at the front.
std::vector<double> lookback_window(const FlowConfig& cfg, std::span<const double> history_frames);

// Velocity v(x_t, t, cond) for x_t of [tokens * frames_per_token, n_mels].
using VelocityFn = std::function<Tensor(const Tensor& x_t, double t, const ChunkCond& cond)>;

struct CfmExample {
  Tensor x1;
  ChunkCond cond;
};

// Mean squared error between v(x_t, t) and x1 - x0 on x_t = (1 - t) x0 + t x1
// for given x0 and t.
Tensor cfm_loss_at(const CfmExample& ex, const Tensor& x0, double t, const VelocityFn& v);
// Draws t ~ U(0, 1) and x0 ~ N(0, I) per example; averages over all entries.
Tensor cfm_loss(std::span<const CfmExample> batch, num::Rng& rng, const VelocityFn& v);

// Euler integration from x0 ~ N(0, I) drawn from rng, over `steps` steps.
Tensor cfm_sample(const ChunkCond& cond, std::size_t rows, std::size_t n_mels, num::Rng& rng, std::size_t steps,
                  const VelocityFn& v);

// Velocity network: per frame, an MLP over
// [x_t, (t, sin 2 pi t, cos 2 pi t), token embedding, slot one-hot, speaker, lookback].
class FlowModel {
 public:
  FlowModel(const FlowConfig& cfg, std::uint64_t seed);

  Tensor velocity(const Tensor& x_t, double t, const ChunkCond& cond) const;
  VelocityFn field() const;
  // Fixed prompt per speaker id, stored (frozen) with the weights.
  SpeakerPrompt speaker(int id) const;

  const FlowConfig& config() const { return cfg_; }
  num::ParamStore& params() { return params_; }
  const num::ParamStore& params() const { return params_; }

  void save(const std::filesystem::path& dir, std::uint64_t step) const;
  static FlowModel load(const std::filesystem::path& dir);

 private:
  FlowConfig cfg_;
  num::ParamStore params_;
  Tensor token_embed_, prompts_;
  nn::Linear in_, mid_, out_;
};

inline constexpr const char* kFlowKind = "flowdec";
inline constexpr const char* kMelKind = "mel";

// Synthesizes one chunk given everything emitted before it.
MelChunk synthesize_chunk(const FlowModel& model, std::span<const int> tokens, std::size_t chunk_index,
                          const SpeakerPrompt& speaker, std::span<const double> history, std::uint64_t utterance_seed);

// Whole-sequence decoding, chunk after chunk. Returns [frames, n_mels].
std::vector<double> synthesize_offline(const FlowModel& model, std::span<const int> tokens,
                                       const SpeakerPrompt& speaker, std::uint64_t utterance_seed);

// Producer/consumer decoding: tokens are pushed as they are produced, full
// chunks go through an ordered queue to a worker thread that synthesizes them
// and hands each MelChunk to the callback in chunk order.
class StreamSynthesizer {
 public:
  using ChunkSink = std::function<void(const MelChunk&)>;
  StreamSynthesizer(const FlowModel& model, SpeakerPrompt speaker, std::uint64_t utterance_seed, ChunkSink sink = {});
  ~StreamSynthesizer();
  StreamSynthesizer(const StreamSynthesizer&) = delete;
  StreamSynthesizer& operator=(const StreamSynthesizer&) = delete;

  // Throws std::out_of_range for ids outside the codebook.
  void push(int token);
  // Flushes the partial chunk, waits for the worker and returns all frames.
  std::vector<double> finish();

 private:
  void enqueue(std::vector<int> chunk);
  void run();

  const FlowModel& model_;
  SpeakerPrompt speaker_;
  std::uint64_t seed_;
  ChunkSink sink_;
  std::vector<int> pending_;
  std::size_t next_index_ = 0;
  std::deque<std::pair<std::size_t, std::vector<int>>> queue_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<double> frames_;
  std::exception_ptr error_;
  std::thread worker_;
  bool finished_ = false;
};

std::vector<double> synthesize_stream(const FlowModel& model, std::span<const int> tokens,
                                      const SpeakerPrompt& speaker, std::uint64_t utterance_seed,
                                      const StreamSynthesizer::ChunkSink& sink = {});

// ---- training targets --------------------------------------------------------

// Fixed mel pattern per (token, slot) plus a per-speaker offset (zero for
// speaker 0): the synthetic stand-in for recorded target speech.
struct MelTable {
  std::size_t n_tokens = 0, frames_per_token = 0, n_mels = 0;
  std::vector<double> patterns;       // n_tokens x frames_per_token x n_mels
  std::vector<double> speaker_shift;  // n_speakers x n_mels

  std::vector<double> render(std::span<const int> tokens, int speaker) const;
};
MelTable make_mel_table(const FlowConfig& cfg, std::size_t n_speakers, std::uint64_t seed);

// Teacher-forced chunk examples of one utterance.
std::vector<CfmExample> chunk_examples(const FlowConfig& cfg, std::span<const int> tokens,
                                       std::span<const double> target_frames, const SpeakerPrompt& speaker);

// ---- rendering ---------------------------------------------------------------

inline constexpr std::size_t kHop = 160;
inline constexpr std::size_t kWindow = 320;
inline constexpr double kMelFloor = -8.0;  // at or below: silent
inline constexpr double kPeak = 0.99;

double bin_frequency(std::size_t bin);  // 200 + 300 * bin Hz

// Overlap-add of periodic-Hann-windowed sinusoids, one per bin, with
// amplitude exp(mel) and phase from the absolute sample index; peak
// normalized to kPeak unless silent. Length hop * (frames - 1) + window.
std::vector<double> pseudo_vocoder(std::span<const double> mel, std::size_t n_mels, std::size_t sample_rate);

// RIFF/WAVE, mono, 16-bit PCM.
void write_wav(const std::filesystem::path& path, std::span<const double> samples, std::size_t sample_rate);
std::vector<double> read_wav(const std::filesystem::path& path, std::size_t* sample_rate = nullptr);

}  // namespace s2st::flowdec
