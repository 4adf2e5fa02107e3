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
#include "s2st/data/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "s2st/io/container.hpp"
#include "s2st/numerics/rng.hpp"

namespace s2st::data {

namespace fs = std::filesystem;
using nlohmann::json;
using num::Rng;

void DataConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw ConfigError("data." + field + ": " + msg);
  };
  if (text_vocab < 2) fail("text_vocab", "must be at least 2");
  if (min_len == 0) fail("min_len", "must be positive");
  if (max_len < min_len) fail("max_len", "must be >= min_len");
  if (max_len > text_vocab) fail("max_len", "exceeds text_vocab (source tokens are distinct)");
  if (frames_per_token == 0) fail("frames_per_token", "must be positive");
  if (feat_dim == 0) fail("feat_dim", "must be positive");
  if (!(frame_rate_hz > 0.0)) fail("frame_rate_hz", "must be positive");
  if (!(noise_std >= 0.0)) fail("noise_std", "must be non-negative");
  if (!(speaker_shift_std >= 0.0)) fail("speaker_shift_std", "must be non-negative");
  if (expand_min == 0) fail("expand_min", "must be positive");
  if (expand_max < expand_min) fail("expand_max", "must be >= expand_min");
  if (codebook_size == 0) fail("codebook_size", "must be positive");
  if (text_vocab * expand_max > codebook_size) {
    fail("text_vocab", "text vocab " + std::to_string(text_vocab) + " x " + std::to_string(expand_max) +
                           " speech ids exceeds codebook capacity " + std::to_string(codebook_size) +
                           " for an injective expansion");
  }
  if (n_train == 0 || n_dev == 0 || n_test == 0) fail("n_train/n_dev/n_test", "every split must be non-empty");
  if (n_speakers == 0) fail("n_speakers", "must be positive");
}

void to_json(json& j, const DataConfig& c) {
  j = json{{"text_vocab", c.text_vocab},
           {"min_len", c.min_len},
           {"max_len", c.max_len},
           {"frames_per_token", c.frames_per_token},
           {"feat_dim", c.feat_dim},
           {"frame_rate_hz", c.frame_rate_hz},
           {"noise_std", c.noise_std},
           {"speaker_shift_std", c.speaker_shift_std},
           {"expand_min", c.expand_min},
           {"expand_max", c.expand_max},
           {"codebook_size", c.codebook_size},
           {"n_train", c.n_train},
           {"n_dev", c.n_dev},
           {"n_test", c.n_test},
           {"n_speakers", c.n_speakers}};
}

void from_json(const json& j, DataConfig& c) {
  json defaults = c;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("data." + key + ": unknown field");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("data.") + key + ": wrong type");
    }
  };
  get("text_vocab", c.text_vocab);
  get("min_len", c.min_len);
  get("max_len", c.max_len);
  get("frames_per_token", c.frames_per_token);
  get("feat_dim", c.feat_dim);
  get("frame_rate_hz", c.frame_rate_hz);
  get("noise_std", c.noise_std);
  get("speaker_shift_std", c.speaker_shift_std);
  get("expand_min", c.expand_min);
  get("expand_max", c.expand_max);
  get("codebook_size", c.codebook_size);
  get("n_train", c.n_train);
  get("n_dev", c.n_dev);
  get("n_test", c.n_test);
  get("n_speakers", c.n_speakers);
}

std::vector<int> Rules::translate(std::span<const int> source) const {
  std::vector<int> out;
  out.reserve(source.size());
  for (int t : source) {
    if (t < 0 || static_cast<std::size_t>(t) >= token_map.size()) {
      throw std::out_of_range("translate: token " + std::to_string(t) + " out of range");
    }
    out.push_back(token_map[static_cast<std::size_t>(t)]);
  }
  if (out.empty()) return out;
  for (std::size_t i = static_cast<std::size_t>(source[0] % 2); i + 1 < out.size(); i += 2) {
    std::swap(out[i], out[i + 1]);
  }
  return out;
}

std::vector<int> Rules::expand(std::span<const int> text) const {
  std::vector<int> out;
  for (int t : text) {
    if (t < 0 || static_cast<std::size_t>(t) >= expansion.size()) {
      throw std::out_of_range("expand: token " + std::to_string(t) + " out of range");
    }
    const auto& e = expansion[static_cast<std::size_t>(t)];
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

Rules make_rules(const DataConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(Rng::derive(seed, 0));
  Rules r;
  r.token_map.resize(config.text_vocab);
  std::iota(r.token_map.begin(), r.token_map.end(), 0);
  rng.shuffle(std::span(r.token_map));

  std::vector<int> ids(config.codebook_size);
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(std::span(ids));
  std::size_t at = 0;
  const std::size_t span = config.expand_max - config.expand_min + 1;
  for (std::size_t t = 0; t < config.text_vocab; ++t) {
    const std::size_t len = config.expand_min + rng.below(span);
    r.expansion.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(at),
                             ids.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }

  r.prototypes.resize(config.text_vocab * config.feat_dim);
  for (auto& v : r.prototypes) v = rng.normal();
  r.speaker_shift.assign(config.n_speakers * config.feat_dim, 0.0);
  for (std::size_t i = config.feat_dim; i < r.speaker_shift.size(); ++i) {
    r.speaker_shift[i] = rng.normal() * config.speaker_shift_std;
  }
  return r;
}

std::string config_hash(const DataConfig& config, std::uint64_t seed) {
  const std::string text = json{{"config", config}, {"seed", seed}}.dump();
  const std::uint64_t h = io::fnv1a64(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

json rules_to_json(const Rules& r) {
  return json{{"token_map", r.token_map},
              {"expansion", r.expansion},
              {"prototypes", r.prototypes},
              {"speaker_shift", r.speaker_shift}};
}

Rules rules_from_json(const json& j) {
  Rules r;
  j.at("token_map").get_to(r.token_map);
  j.at("expansion").get_to(r.expansion);
  j.at("prototypes").get_to(r.prototypes);
  j.at("speaker_shift").get_to(r.speaker_shift);
  return r;
}

std::size_t split_size(const DataConfig& c, const std::string& split) {
  if (split == "train") return c.n_train;
  if (split == "dev") return c.n_dev;
  return c.n_test;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

CorpusInfo gen_corpus(const DataConfig& config, std::uint64_t seed, const fs::path& out) {
  config.validate();
  CorpusInfo info{config, seed, config_hash(config, seed), make_rules(config, seed)};
  fs::create_directories(out / "features");
  const std::size_t F = config.feat_dim;

  for (std::size_t si = 0; si < kSplits.size(); ++si) {
    const std::string& split = kSplits[si];
    Rng rng(Rng::derive(seed, si + 1));
    Manifest m{split, info.config_hash, out, {}};
    io::Container feats;
    feats.kind = "features";
    feats.config = json{{"split", split}, {"feat_dim", F}, {"frame_rate_hz", config.frame_rate_hz}};

    std::vector<int> pool(config.text_vocab);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t n = 0; n < split_size(config, split); ++n) {
      char id[64];
      std::snprintf(id, sizeof id, "%s-%05zu", split.c_str(), n);
      Utterance u;
      u.id = id;
      const std::size_t len = config.min_len + rng.below(config.max_len - config.min_len + 1);
      // Partial Fisher-Yates: distinct tokens.
      for (std::size_t i = 0; i < len; ++i) {
        std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        u.src_tokens.push_back(pool[i]);
      }
      u.speaker = static_cast<int>(rng.below(config.n_speakers));
      u.tgt_text = info.rules.translate(u.src_tokens);
      u.tgt_speech = info.rules.expand(u.tgt_text);
      u.feat_file = "features/" + split;

      const std::size_t T = len * config.frames_per_token;
      std::vector<double> frames(T * F);
      const double* shift = info.rules.speaker_shift.data() + static_cast<std::size_t>(u.speaker) * F;
      for (std::size_t t = 0; t < T; ++t) {
        const auto tok = static_cast<std::size_t>(u.src_tokens[t / config.frames_per_token]);
        for (std::size_t f = 0; f < F; ++f) {
          frames[t * F + f] = info.rules.prototypes[tok * F + f] + shift[f] + config.noise_std * rng.normal();
        }
      }
      feats.add(u.id, {T, F}, std::move(frames));
      m.items.push_back(std::move(u));
    }
    io::save_container(out / "features" / split, feats);
    write_manifest(out / (split + ".jsonl"), m);
  }

  json corpus{{"config", config},
              {"seed", seed},
              {"config_hash", info.config_hash},
              {"splits", {{"train", config.n_train}, {"dev", config.n_dev}, {"test", config.n_test}}},
              {"rules", rules_to_json(info.rules)}};
  write_text(out / "corpus.json", corpus.dump(2) + "\n");
  return info;
}

CorpusInfo load_corpus_info(const fs::path& dir) {
  std::ifstream in(dir / "corpus.json");
  if (!in) throw std::runtime_error("corpus: missing " + (dir / "corpus.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("corpus: malformed corpus.json: " + std::string(e.what()));
  }
  CorpusInfo info;
  info.config = j.at("config").get<DataConfig>();
  info.seed = j.at("seed").get<std::uint64_t>();
  info.config_hash = j.at("config_hash").get<std::string>();
  info.rules = rules_from_json(j.at("rules"));
  if (info.config_hash != config_hash(info.config, info.seed)) {
    throw std::runtime_error("corpus: config hash does not match regeneration");
  }
  return info;
}

std::vector<int> oracle_translate(const CorpusInfo& info, const AudioFeatureSeq& features, int speaker) {
  const DataConfig& c = info.config;
  features.validate(c.feat_dim);
  const std::size_t F = c.feat_dim;
  const std::size_t n = features.frames / c.frames_per_token;
  const double* shift = info.rules.speaker_shift.data() + static_cast<std::size_t>(speaker) * F;
  std::vector<int> source;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> mean(F, 0.0);
    for (std::size_t t = i * c.frames_per_token; t < (i + 1) * c.frames_per_token; ++t) {
      for (std::size_t f = 0; f < F; ++f) mean[f] += features.values[t * F + f] - shift[f];
    }
    int best = 0;
    double best_d = INFINITY;
    for (std::size_t tok = 0; tok < c.text_vocab; ++tok) {
      double d = 0.0;
      for (std::size_t f = 0; f < F; ++f) {
        const double e = mean[f] / static_cast<double>(c.frames_per_token) - info.rules.prototypes[tok * F + f];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(tok);
      }
    }
    source.push_back(best);
  }
  return info.rules.translate(source);
}

json utterance_to_json(const Utterance& u) {
  return json{{"id", u.id},         {"src_tokens", u.src_tokens}, {"feat_file", u.feat_file},
              {"tgt_text", u.tgt_text}, {"tgt_speech", u.tgt_speech}, {"speaker", u.speaker}};
}

Utterance utterance_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
  for (const char* key : {"id", "src_tokens", "feat_file", "tgt_text", "tgt_speech", "speaker"}) {
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  }
  Utterance u;
  j.at("id").get_to(u.id);
  j.at("src_tokens").get_to(u.src_tokens);
  j.at("feat_file").get_to(u.feat_file);
  j.at("tgt_text").get_to(u.tgt_text);
  j.at("tgt_speech").get_to(u.tgt_speech);
  j.at("speaker").get_to(u.speaker);
  return u;
}

// The first line is a header record carrying the split tag and config hash;
// every following line is one utterance.
void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ostringstream out;
  out << json{{"split", manifest.split}, {"config_hash", manifest.config_hash}}.dump() << "\n";
  for (const auto& u : manifest.items) out << utterance_to_json(u).dump() << "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, out.str());
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::set<std::string> ids, checked_files;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(lineno) + ": "; };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw std::runtime_error(where() + "malformed JSON");
    }
    if (lineno == 1 && j.is_object() && j.contains("split") && !j.contains("id")) {
      try {
        j.at("split").get_to(m.split);
        j.at("config_hash").get_to(m.config_hash);
      } catch (const json::exception&) {
        throw std::runtime_error(where() + "malformed header");
      }
      continue;
    }
    Utterance u;
    try {
      u = utterance_from_json(j);
    } catch (const std::exception& e) {
      throw std::runtime_error(where() + e.what());
    }
    if (!ids.insert(u.id).second) throw std::runtime_error(where() + "duplicate id '" + u.id + "'");
    if (checked_files.insert(u.feat_file).second) {
      const fs::path feat = m.root / u.feat_file;
      if (!fs::exists(feat / io::kMetaFile) || !fs::exists(feat / io::kParamsFile)) {
        throw std::runtime_error(where() + "missing feature file " + feat.string());
      }
    }
    m.items.push_back(std::move(u));
  }
  return m;
}

AudioFeatureSeq FeatureStore::get(const Utterance& u) {
  auto it = shards_.find(u.feat_file);
  if (it == shards_.end()) {
    io::Container c = io::load_container(root_ / u.feat_file, "features");
    std::map<std::string, AudioFeatureSeq> shard;
    for (auto& a : c.arrays) {
      if (a.shape.size() != 2) throw io::FormatError("features: array '" + a.name + "' is not 2-D");
      shard.emplace(a.name, AudioFeatureSeq{a.shape[0], a.shape[1], frame_rate_hz_, std::move(a.values)});
    }
    it = shards_.emplace(u.feat_file, std::move(shard)).first;
  }
  auto f = it->second.find(u.id);
  if (f == it->second.end()) throw std::runtime_error("features: no entry for '" + u.id + "' in " + u.feat_file);
  return f->second;
}

std::vector<Batch> make_batches(const Manifest& manifest, std::size_t batch_size, std::uint64_t seed, int text_pad,
                                int speech_pad) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch size must be positive");
  std::vector<std::size_t> order(manifest.items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  std::vector<Batch> batches;
  for (std::size_t at = 0; at < order.size(); at += batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), at + batch_size);
    std::size_t max_text = 0, max_speech = 0;
    for (std::size_t i = at; i < end; ++i) {
      const auto& u = manifest.items[order[i]];
      max_text = std::max(max_text, u.tgt_text.size());
      max_speech = std::max(max_speech, u.tgt_speech.size());
    }
    for (std::size_t i = at; i < end; ++i) {
      const auto& u = manifest.items[order[i]];
      b.items.push_back(order[i]);
      b.text_len.push_back(u.tgt_text.size());
      b.speech_len.push_back(u.tgt_speech.size());
      auto text = u.tgt_text;
      text.resize(max_text, text_pad);
      auto speech = u.tgt_speech;
      speech.resize(max_speech, speech_pad);
      b.text.push_back(std::move(text));
      b.speech.push_back(std::move(speech));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace s2st::data
