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
#include "s2st/fsq/fsq.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "s2st/io/container.hpp"
#include "s2st/nn/layers.hpp"
#include "s2st/numerics/optim.hpp"

namespace s2st::fsq {

using nlohmann::json;
using namespace s2st::num;

void FsqConfig::validate() const {
  if (levels.empty()) throw ConfigError("fsq.levels: must be non-empty");
  std::size_t product = 1;
  for (int l : levels) {
    if (l < 3 || l % 2 == 0) throw ConfigError("fsq.levels: every level must be odd and >= 3, got " + std::to_string(l));
    product *= static_cast<std::size_t>(l);
    if (product > static_cast<std::size_t>(std::numeric_limits<int>::max())) {
      throw ConfigError("fsq.levels: codebook does not fit the token id type");
    }
  }
}

std::size_t FsqConfig::codebook_size() const {
  std::size_t n = 1;
  for (int l : levels) n *= static_cast<std::size_t>(l);
  return n;
}

int code_to_token(const FsqConfig& cfg, std::span<const int> code) {
  if (code.size() != cfg.dims()) throw std::invalid_argument("fsq: code has wrong dimension");
  int id = 0;
  for (std::size_t j = 0; j < cfg.dims(); ++j) {
    const int h = cfg.half(j);
    if (code[j] < -h || code[j] > h) {
      throw std::out_of_range("fsq: code entry " + std::to_string(code[j]) + " outside [-" + std::to_string(h) + ", " +
                              std::to_string(h) + "]");
    }
    id = id * cfg.levels[j] + (code[j] + h);
  }
  return id;
}

std::vector<int> token_to_code(const FsqConfig& cfg, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= cfg.codebook_size()) {
    throw std::out_of_range("fsq: token id " + std::to_string(id) + " outside [0, " +
                            std::to_string(cfg.codebook_size()) + ")");
  }
  std::vector<int> code(cfg.dims());
  for (std::size_t j = cfg.dims(); j-- > 0;) {
    code[j] = id % cfg.levels[j] - cfg.half(j);
    id /= cfg.levels[j];
  }
  return code;
}

FsqCode quantize(const FsqConfig& cfg, std::span<const double> z) {
  if (z.size() != cfg.dims()) throw std::invalid_argument("fsq: latent has wrong dimension");
  FsqCode out;
  for (std::size_t j = 0; j < cfg.dims(); ++j) {
    if (!std::isfinite(z[j])) throw NumericError("fsq: non-finite latent");
    out.code.push_back(static_cast<int>(std::round(cfg.half(j) * std::tanh(z[j]))));
  }
  out.id = code_to_token(cfg, out.code);
  return out;
}

std::vector<double> center_latent(const FsqConfig& cfg, std::span<const int> code) {
  std::vector<double> z(cfg.dims());
  for (std::size_t j = 0; j < cfg.dims(); ++j) {
    const double r = std::clamp(static_cast<double>(code[j]) / cfg.half(j), -0.999, 0.999);
    z[j] = std::atanh(r);
  }
  return z;
}

namespace {

Tensor half_row(const FsqConfig& cfg) {
  std::vector<double> h(cfg.dims());
  for (std::size_t j = 0; j < cfg.dims(); ++j) h[j] = cfg.half(j);
  return Tensor::from({cfg.dims()}, std::move(h));
}

Tensor inv_half_row(const FsqConfig& cfg) {
  std::vector<double> h(cfg.dims());
  for (std::size_t j = 0; j < cfg.dims(); ++j) h[j] = 1.0 / cfg.half(j);
  return Tensor::from({cfg.dims()}, std::move(h));
}

}  // namespace

Tensor bound(const FsqConfig& cfg, const Tensor& z) {
  if (z.dim() != 2 || z.cols() != cfg.dims()) {
    throw ShapeError("fsq.bound: latent " + shape_str(z.shape()) + " vs " + std::to_string(cfg.dims()) + " levels");
  }
  return mul(num::tanh(z), half_row(cfg));
}

Tensor quantize_ste(const FsqConfig& cfg, const Tensor& z) { return round_ste(bound(cfg, z)); }

void TokenizerConfig::validate() const {
  fsq.validate();
  if (feat_dim == 0) throw ConfigError("tokenizer.feat_dim: must be positive");
  if (subsample == 0) throw ConfigError("tokenizer.subsample: must be positive");
  if (hidden == 0 || head_hidden == 0) throw ConfigError("tokenizer.hidden: must be positive");
  if (classes == 0) throw ConfigError("tokenizer.classes: must be positive");
  if (batch_utterances == 0) throw ConfigError("tokenizer.batch_utterances: must be positive");
  if (!(lr >= 0.0)) throw ConfigError("tokenizer.lr: must be non-negative");
}

void to_json(json& j, const TokenizerConfig& c) {
  j = json{{"levels", c.fsq.levels},   {"feat_dim", c.feat_dim}, {"subsample", c.subsample},
           {"hidden", c.hidden},       {"head_hidden", c.head_hidden}, {"classes", c.classes},
           {"epochs", c.epochs},       {"batch_utterances", c.batch_utterances}, {"lr", c.lr}};
}

void from_json(const json& j, TokenizerConfig& c) {
  const json defaults = c;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("tokenizer." + key + ": unknown field");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("tokenizer.") + key + ": wrong type");
    }
  };
  get("levels", c.fsq.levels);
  get("feat_dim", c.feat_dim);
  get("subsample", c.subsample);
  get("hidden", c.hidden);
  get("head_hidden", c.head_hidden);
  get("classes", c.classes);
  get("epochs", c.epochs);
  get("batch_utterances", c.batch_utterances);
  get("lr", c.lr);
}

Tokenizer::Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t in = cfg_.feat_dim * cfg_.subsample;
  nn::Linear(params_, "fsq.enc1", in, cfg_.hidden, rng);
  nn::Linear(params_, "fsq.enc2", cfg_.hidden, cfg_.fsq.dims(), rng);
  nn::Linear(params_, "fsq.head1", cfg_.fsq.dims(), cfg_.head_hidden, rng);
  nn::Linear(params_, "fsq.head2", cfg_.head_hidden, cfg_.classes, rng);
}

namespace {

Tensor affine(const ParamStore& p, const std::string& name, const Tensor& x) {
  return add(matmul(x, p.get(name + ".weight")), p.get(name + ".bias"));
}

}  // namespace

Tensor Tokenizer::latents(const Tensor& frames) const {
  if (frames.dim() != 2 || frames.cols() != cfg_.feat_dim) {
    throw ShapeError("tokenizer: frames " + shape_str(frames.shape()) + " vs feat_dim " +
                     std::to_string(cfg_.feat_dim));
  }
  if (frames.rows() < cfg_.subsample) {
    throw std::invalid_argument("tokenizer: need at least " + std::to_string(cfg_.subsample) + " frames");
  }
  Tensor stacked = unfold1d(frames, cfg_.subsample, cfg_.subsample, 0);
  return affine(params_, "fsq.enc2", silu(affine(params_, "fsq.enc1", stacked)));
}

Tensor Tokenizer::class_logits(const Tensor& codes) const {
  Tensor unit = mul(codes, inv_half_row(cfg_.fsq));
  return affine(params_, "fsq.head2", silu(affine(params_, "fsq.head1", unit)));
}

std::vector<int> Tokenizer::tokenize(const AudioFeatureSeq& seq) const {
  if (!trained_) throw std::logic_error("tokenizer: not trained");
  seq.validate(cfg_.feat_dim);
  NoGradGuard no_grad;
  const Tensor z = latents(Tensor::from({seq.frames, seq.dim}, seq.values));
  std::vector<int> ids;
  for (std::size_t r = 0; r < z.rows(); ++r) ids.push_back(quantize(cfg_.fsq, z.values().subspan(r * z.cols(), z.cols())).id);
  return ids;
}

void Tokenizer::save(const std::filesystem::path& dir) const {
  io::save_container(dir, io::container_from_store(params_, kTokenizerKind, steps_, json(cfg_)));
}

Tokenizer Tokenizer::load(const std::filesystem::path& dir) {
  const io::Container c = io::load_container(dir, kTokenizerKind);
  Tokenizer tok(c.config.get<TokenizerConfig>(), 0);
  io::restore_store(tok.params_, c);
  tok.steps_ = c.step;
  tok.trained_ = true;
  return tok;
}

std::vector<int> frame_labels(const data::Utterance& u, std::size_t frames_per_source_token, std::size_t subsample) {
  const std::size_t frames = u.src_tokens.size() * frames_per_source_token;
  std::vector<int> labels;
  for (std::size_t j = 0; j < frames / subsample; ++j) labels.push_back(u.src_tokens[j * subsample / frames_per_source_token]);
  return labels;
}

double frame_accuracy(const Tokenizer& tok, const data::Manifest& manifest, data::FeatureStore& features,
                      std::size_t frames_per_source_token) {
  NoGradGuard no_grad;
  std::size_t correct = 0, total = 0;
  for (const auto& u : manifest.items) {
    const auto seq = features.get(u);
    const Tensor logits = tok.class_logits(quantize_ste(tok.config().fsq, tok.latents(Tensor::from({seq.frames, seq.dim}, seq.values))));
    const auto labels = frame_labels(u, frames_per_source_token, tok.config().subsample);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      auto row = logits.values().subspan(r * logits.cols(), logits.cols());
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == labels[r];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TrainResult train_tokenizer(Tokenizer& tok, const data::Manifest& manifest, data::FeatureStore& features,
                            std::size_t frames_per_source_token, std::uint64_t seed) {
  if (manifest.items.empty()) throw std::invalid_argument("train_tokenizer: empty corpus");
  const TokenizerConfig& cfg = tok.config();
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  AdamW opt(tok.params().trainable(), opt_cfg);
  Rng rng(seed);
  TrainResult result;
  std::vector<std::size_t> order(manifest.items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    std::vector<double> losses;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_utterances) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_utterances);
      std::vector<Tensor> parts;
      std::vector<int> labels;
      for (std::size_t i = at; i < end; ++i) {
        const auto& u = manifest.items[order[i]];
        const auto seq = features.get(u);
        parts.push_back(tok.latents(Tensor::from({seq.frames, seq.dim}, seq.values)));
        const auto l = frame_labels(u, frames_per_source_token, cfg.subsample);
        labels.insert(labels.end(), l.begin(), l.end());
      }
      Tensor z = parts.size() == 1 ? parts[0] : concat(parts, 0);
      Tensor loss = cross_entropy(tok.class_logits(quantize_ste(cfg.fsq, z)), labels);
      opt.zero_grad();
      backward(loss);
      opt.step();
      ++tok.steps_;
      losses.push_back(loss.item());
    }
    EpochLog log;
    log.epoch = epoch;
    const std::size_t tenth = std::max<std::size_t>(1, losses.size() / 10);
    log.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    log.first_loss = std::accumulate(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(tenth), 0.0) / static_cast<double>(tenth);
    log.last_loss = std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(tenth), losses.end(), 0.0) / static_cast<double>(tenth);
    log.accuracy = frame_accuracy(tok, manifest, features, frames_per_source_token);
    result.epochs.push_back(log);
  }
  tok.trained_ = true;
  result.final_accuracy = result.epochs.empty() ? frame_accuracy(tok, manifest, features, frames_per_source_token)
                                                : result.epochs.back().accuracy;
  return result;
}

}  // namespace s2st::fsq
