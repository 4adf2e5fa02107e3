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

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2st/data/corpus.hpp"

namespace s2st::eval {

using Tokens = std::vector<int>;

// Corpus BLEU over 1..4-grams with clipped counts and brevity penalty, no
// smoothing: any zero n-gram precision gives 0. Score in [0, 100].
double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);
// Single-pair BLEU with the n-gram order capped at the shorter length, so
// short sentences are not scored 0 for lacking 4-grams.
double sentence_bleu(const Tokens& hypothesis, const Tokens& reference);

// Levenshtein distance / reference length.
double wer(std::span<const int> hypothesis, std::span<const int> reference);
std::size_t edit_distance(std::span<const int> a, std::span<const int> b);

// Greedy longest-match inverse of an expansion table. Unmatched runs collapse
// to one unk token and decoding resumes at the next position that matches.
class Transcriber {
 public:
  Transcriber(const std::vector<std::vector<int>>& expansion, int unk);
  Tokens operator()(std::span<const int> speech) const;

 private:
  std::map<std::vector<int>, int> entries_;
  std::size_t longest_ = 0;
  int unk_;
};

std::string normalize(std::string_view text);
// Synthetic token ids carry no case or punctuation.
inline Tokens normalize(std::span<const int> tokens) { return Tokens(tokens.begin(), tokens.end()); }

struct Prediction {
  std::string id;
  Tokens text;
  Tokens speech;
  bool truncated = false;
};

struct UtteranceScore {
  std::string id;
  double bleu_sent = 0.0;
  double wer = 0.0;  // transcript of own speech vs own text
  bool truncated = false;
};

struct EvalReport {
  double bleu = 0.0;
  double asr_bleu = 0.0;
  double align_wer = 0.0;
  std::size_t n_utterances = 0;
  std::size_t truncated = 0;
  std::vector<UtteranceScore> rows;
};

// Predictions are matched to references by id; every reference must have a
// prediction and vice versa.
EvalReport evaluate(const std::vector<Prediction>& predictions, const data::Manifest& references,
                    const Transcriber& transcribe);

void write_report(const std::filesystem::path& dir, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& json_path);

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

}  // namespace s2st::eval
