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
#include "s2st/eval/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace s2st::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kMaxOrder = 4;

struct NgramStats {
  std::size_t hyp_len = 0, ref_len = 0;
  std::size_t matches[kMaxOrder] = {};
  std::size_t totals[kMaxOrder] = {};
};

void accumulate(NgramStats& s, const Tokens& hyp, const Tokens& ref) {
  if (ref.empty()) throw std::invalid_argument("bleu: empty reference");
  s.hyp_len += hyp.size();
  s.ref_len += ref.size();
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    std::map<std::vector<int>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[Tokens(ref.begin() + i, ref.begin() + i + n)];
    std::map<std::vector<int>, std::size_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[Tokens(hyp.begin() + i, hyp.begin() + i + n)];
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) s.matches[n - 1] += std::min(count, it->second);
      s.totals[n - 1] += count;
    }
  }
}

double score(const NgramStats& s, std::size_t order) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < order; ++n) {
    if (s.matches[n] == 0 || s.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  const double c = static_cast<double>(s.hyp_len);
  const double r = static_cast<double>(s.ref_len);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(order));
}

}  // namespace

double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                                std::to_string(references.size()) + " references");
  }
  if (references.empty()) throw std::invalid_argument("bleu: no references");
  NgramStats s;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) accumulate(s, hypotheses[i], references[i]);
  return score(s, kMaxOrder);
}

double sentence_bleu(const Tokens& hypothesis, const Tokens& reference) {
  NgramStats s;
  accumulate(s, hypothesis, reference);
  const std::size_t order = std::min({kMaxOrder, hypothesis.size(), reference.size()});
  if (order == 0) return 0.0;
  return score(s, order);
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(std::span<const int> hypothesis, std::span<const int> reference) {
  if (reference.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(edit_distance(hypothesis, reference)) / static_cast<double>(reference.size());
}

Transcriber::Transcriber(const std::vector<std::vector<int>>& expansion, int unk) : unk_(unk) {
  for (std::size_t t = 0; t < expansion.size(); ++t) {
    if (expansion[t].empty()) throw std::invalid_argument("transcriber: empty expansion entry");
    if (!entries_.emplace(expansion[t], static_cast<int>(t)).second) {
      throw std::invalid_argument("transcriber: duplicate expansion entry");
    }
    longest_ = std::max(longest_, expansion[t].size());
  }
}

Tokens Transcriber::operator()(std::span<const int> speech) const {
  auto match_at = [&](std::size_t i, std::size_t& len) -> int {
    for (len = std::min(longest_, speech.size() - i); len > 0; --len) {
      auto it = entries_.find(std::vector<int>(speech.begin() + i, speech.begin() + i + len));
      if (it != entries_.end()) return it->second;
    }
    return -1;
  };
  Tokens out;
  bool in_garbage = false;
  for (std::size_t i = 0; i < speech.size();) {
    std::size_t len = 0;
    const int tok = match_at(i, len);
    if (tok >= 0) {
      out.push_back(tok);
      in_garbage = false;
      i += len;
    } else {
      if (!in_garbage) out.push_back(unk_);
      in_garbage = true;
      ++i;
    }
  }
  return out;
}

std::string normalize(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
    } else if (std::ispunct(c)) {
      continue;
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  return out;
}

EvalReport evaluate(const std::vector<Prediction>& predictions, const data::Manifest& references,
                    const Transcriber& transcribe) {
  if (references.items.empty()) throw std::invalid_argument("evaluate: no references");
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) throw std::invalid_argument("evaluate: duplicate prediction id '" + p.id + "'");
  }
  std::vector<std::string> missing;
  std::set<std::string> ref_ids;
  for (const auto& u : references.items) {
    ref_ids.insert(u.id);
    if (!by_id.count(u.id)) missing.push_back(u.id);
  }
  for (const auto& p : predictions) {
    if (!ref_ids.count(p.id)) missing.push_back(p.id + " (no reference)");
  }
  if (!missing.empty()) {
    std::string msg = "evaluate: id mismatch, missing:";
    for (const auto& id : missing) msg += " " + id;
    throw std::invalid_argument(msg);
  }

  EvalReport r;
  std::vector<Tokens> hyps, asr_hyps, refs;
  double wer_sum = 0.0;
  for (const auto& u : references.items) {
    const Prediction& p = *by_id.at(u.id);
    const Tokens transcript = transcribe(p.speech);
    hyps.push_back(normalize(p.text));
    asr_hyps.push_back(normalize(transcript));
    refs.push_back(normalize(u.tgt_text));
    UtteranceScore row{u.id, sentence_bleu(p.text, u.tgt_text), 0.0, p.truncated};
    // Own text is the reference here; an empty one scores 0 against an empty
    // transcript and 1 otherwise.
    row.wer = p.text.empty() ? (transcript.empty() ? 0.0 : 1.0) : wer(transcript, p.text);
    wer_sum += row.wer;
    if (p.truncated) ++r.truncated;
    r.rows.push_back(row);
  }
  r.n_utterances = r.rows.size();
  r.bleu = bleu(hyps, refs);
  r.asr_bleu = bleu(asr_hyps, refs);
  r.align_wer = wer_sum / static_cast<double>(r.n_utterances);
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_report(const fs::path& dir, const EvalReport& r) {
  fs::create_directories(dir);
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"id", row.id}, {"bleu_sent", row.bleu_sent}, {"wer", row.wer}, {"truncated", row.truncated}});
  }
  json j{{"bleu", r.bleu},
         {"asr_bleu", r.asr_bleu},
         {"align_wer", r.align_wer},
         {"n_utterances", r.n_utterances},
         {"truncated", r.truncated},
         {"rows", rows}};
  std::ofstream(dir / "report.json", std::ios::binary) << j.dump(2) << "\n";
  std::ofstream csv(dir / "report.csv", std::ios::binary);
  csv << "id,bleu_sent,wer,truncated\n";
  for (const auto& row : r.rows) {
    csv << row.id << "," << fmt(row.bleu_sent) << "," << fmt(row.wer) << "," << (row.truncated ? 1 : 0) << "\n";
  }
  if (!csv) throw std::runtime_error("report: write failed in " + dir.string());
}

EvalReport read_report(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("report: cannot open " + json_path.string());
  const json j = json::parse(in);
  EvalReport r;
  j.at("bleu").get_to(r.bleu);
  j.at("asr_bleu").get_to(r.asr_bleu);
  j.at("align_wer").get_to(r.align_wer);
  j.at("n_utterances").get_to(r.n_utterances);
  j.at("truncated").get_to(r.truncated);
  for (const auto& row : j.at("rows")) {
    r.rows.push_back({row.at("id"), row.at("bleu_sent"), row.at("wer"), row.at("truncated")});
  }
  return r;
}

void write_predictions(const fs::path& path, const std::vector<Prediction>& predictions) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  for (const auto& p : predictions) {
    json j{{"id", p.id}, {"text", p.text}, {"speech", p.speech}};
    if (p.truncated) j["truncated"] = true;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("predictions: write failed: " + path.string());
}

std::vector<Prediction> load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("predictions: cannot open " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Prediction p;
      j.at("id").get_to(p.id);
      j.at("text").get_to(p.text);
      j.at("speech").get_to(p.speech);
      if (j.contains("truncated")) j.at("truncated").get_to(p.truncated);
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace s2st::eval
