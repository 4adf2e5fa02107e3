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
// Synthetic S2ST corpus. Source "speech" is a sequence of noisy per-token
// prototype frames; target text applies a bijective token map followed by an
// adjacent-pair swap whose phase is the parity of the first source token;
// target speech replaces each text token by its fixed expansion.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2st/types.hpp"

namespace s2st::data {

struct DataConfig {
  std::size_t text_vocab = 24;  // content tokens in each language
  std::size_t min_len = 3;
  std::size_t max_len = 6;
  std::size_t frames_per_token = 4;
  std::size_t feat_dim = 16;
  double frame_rate_hz = 50.0;
  double noise_std = 0.3;
  double speaker_shift_std = 0.5;  // source-feature offset per extra speaker
  std::size_t expand_min = 2;
  std::size_t expand_max = 4;
  std::size_t codebook_size = 125;
  std::size_t n_train = 8000;
  std::size_t n_dev = 100;
  std::size_t n_test = 200;
  std::size_t n_speakers = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct Rules {
  std::vector<int> token_map;               // source token -> target token
  std::vector<std::vector<int>> expansion;  // target token -> speech ids
  std::vector<double> prototypes;           // text_vocab x feat_dim
  std::vector<double> speaker_shift;        // n_speakers x feat_dim, speaker 0 is zero

  std::vector<int> translate(std::span<const int> source) const;
  std::vector<int> expand(std::span<const int> text) const;
};

Rules make_rules(const DataConfig& config, std::uint64_t seed);

struct Utterance {
  std::string id;
  std::vector<int> src_tokens;
  std::string feat_file;  // relative to the manifest directory
  std::vector<int> tgt_text;
  std::vector<int> tgt_speech;
  int speaker = 0;
};

struct Manifest {
  std::string split;
  std::string config_hash;
  std::filesystem::path root;  // directory feature paths are relative to
  std::vector<Utterance> items;
};

struct CorpusInfo {
  DataConfig config;
  std::uint64_t seed = 0;
  std::string config_hash;
  Rules rules;
};

inline const std::vector<std::string> kSplits = {"train", "dev", "test"};

std::string config_hash(const DataConfig& config, std::uint64_t seed);

// Writes corpus.json, <split>.jsonl and features/<split>/ under out.
CorpusInfo gen_corpus(const DataConfig& config, std::uint64_t seed, const std::filesystem::path& out);
CorpusInfo load_corpus_info(const std::filesystem::path& dir);

// Rule-based reference system: nearest-prototype recognition of each source
// token's frames, then the translation rule. Ceiling for learned models.
std::vector<int> oracle_translate(const CorpusInfo& info, const AudioFeatureSeq& features, int speaker);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

nlohmann::json utterance_to_json(const Utterance& u);
Utterance utterance_from_json(const nlohmann::json& j);

// Source features of one utterance. Shards are loaded once and cached.
class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path root, double frame_rate_hz = 50.0)
      : root_(std::move(root)), frame_rate_hz_(frame_rate_hz) {}
  AudioFeatureSeq get(const Utterance& u);

 private:
  std::filesystem::path root_;
  double frame_rate_hz_;
  std::map<std::string, std::map<std::string, AudioFeatureSeq>> shards_;
};

struct Batch {
  std::vector<std::size_t> items;  // indices into the manifest
  std::vector<std::vector<int>> text;
  std::vector<std::vector<int>> speech;
  std::vector<std::size_t> text_len;
  std::vector<std::size_t> speech_len;
};

// Seeded shuffle, then consecutive groups; streams padded to the batch max.
std::vector<Batch> make_batches(const Manifest& manifest, std::size_t batch_size, std::uint64_t seed, int text_pad,
                                int speech_pad);

}  // namespace s2st::data
