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
#include "s2st/frontend/frontend.hpp"

#include <numeric>
#include <stdexcept>

#include "s2st/numerics/optim.hpp"

namespace s2st::frontend {

using nlohmann::json;
using namespace s2st::num;

void FrontendConfig::validate() const {
  if (feat_dim == 0) throw ConfigError("frontend.feat_dim: must be positive");
  if (conv_strides.empty()) throw ConfigError("frontend.conv_strides: need at least one conv layer");
  for (auto s : conv_strides) {
    if (s == 0) throw ConfigError("frontend.conv_strides: strides must be >= 1");
  }
  if (conv_kernel == 0) throw ConfigError("frontend.conv_kernel: must be positive");
  if (heads == 0 || enc_dim % heads != 0) throw ConfigError("frontend.enc_dim: must be divisible by heads");
  if (conv_module_kernel % 2 == 0) throw ConfigError("frontend.conv_module_kernel: must be odd");
  if (ff_dim == 0 || adapter_hidden == 0 || lm_dim == 0) throw ConfigError("frontend: widths must be positive");
  if (max_positions == 0) throw ConfigError("frontend.max_positions: must be positive");
}

std::size_t FrontendConfig::downsample_factor() const {
  std::size_t f = 1;
  for (auto s : conv_strides) f *= s;
  return f;
}

void to_json(json& j, const FrontendConfig& c) {
  j = json{{"feat_dim", c.feat_dim},
           {"conv_strides", c.conv_strides},
           {"conv_kernel", c.conv_kernel},
           {"conv_pad", c.conv_pad},
           {"encoder_blocks", c.encoder_blocks},
           {"enc_dim", c.enc_dim},
           {"heads", c.heads},
           {"ff_dim", c.ff_dim},
           {"conv_module_kernel", c.conv_module_kernel},
           {"adapter_hidden", c.adapter_hidden},
           {"lm_dim", c.lm_dim},
           {"max_positions", c.max_positions}};
}

void from_json(const json& j, FrontendConfig& c) {
  const json defaults = c;
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("frontend." + key + ": unknown field");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("frontend.") + key + ": wrong type");
    }
  };
  get("feat_dim", c.feat_dim);
  get("conv_strides", c.conv_strides);
  get("conv_kernel", c.conv_kernel);
  get("conv_pad", c.conv_pad);
  get("encoder_blocks", c.encoder_blocks);
  get("enc_dim", c.enc_dim);
  get("heads", c.heads);
  get("ff_dim", c.ff_dim);
  get("conv_module_kernel", c.conv_module_kernel);
  get("adapter_hidden", c.adapter_hidden);
  get("lm_dim", c.lm_dim);
  get("max_positions", c.max_positions);
}

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (length + 2 * pad < kernel) return 0;
  return (length + 2 * pad - kernel) / stride + 1;
}

std::size_t min_input_length(const FrontendConfig& cfg) {
  std::size_t t = std::max<std::size_t>(1, cfg.downsample_factor());
  auto ok = [&](std::size_t len) {
    for (auto s : cfg.conv_strides) {
      len = conv_output_length(len, cfg.conv_kernel, s, cfg.conv_pad);
      if (len == 0) return false;
    }
    return true;
  };
  while (!ok(t)) ++t;
  return t;
}

std::size_t subsampled_length(const FrontendConfig& cfg, std::size_t frames) {
  const std::size_t min_len = min_input_length(cfg);
  if (frames < min_len) {
    throw std::invalid_argument("frontend: input has " + std::to_string(frames) + " frames, minimum is " +
                                std::to_string(min_len));
  }
  for (auto s : cfg.conv_strides) frames = conv_output_length(frames, cfg.conv_kernel, s, cfg.conv_pad);
  return frames;
}

Frontend::Frontend(const FrontendConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  std::size_t in = cfg_.feat_dim;
  for (std::size_t i = 0; i < cfg_.conv_strides.size(); ++i) {
    conv_.emplace_back(store, "frontend.conv" + std::to_string(i), in * cfg_.conv_kernel, cfg_.enc_dim, rng);
    in = cfg_.enc_dim;
  }
  positions_ = store.add("frontend.positions", init::normal(rng, {cfg_.max_positions, cfg_.enc_dim}, 0.1));
  const nn::BlockConfig bc{cfg_.enc_dim, cfg_.heads, cfg_.ff_dim};
  for (std::size_t i = 0; i < cfg_.encoder_blocks; ++i) {
    blocks_.emplace_back(store, "frontend.block" + std::to_string(i), bc, cfg_.conv_module_kernel, rng);
  }
  adapter_in_ = nn::Linear(store, "frontend.adapter.in", cfg_.enc_dim, cfg_.adapter_hidden, rng);
  adapter_out_ = nn::Linear(store, "frontend.adapter.out", cfg_.adapter_hidden, cfg_.lm_dim, rng);
}

void Frontend::attach_warmup_head(ParamStore& store, std::size_t classes, Rng& rng) {
  warmup_head_ = nn::Linear(store, "frontend.warmup_head", cfg_.lm_dim, classes, rng);
}

Tensor Frontend::conv_subsample(const Tensor& frames) const {
  if (frames.dim() != 2 || frames.cols() != cfg_.feat_dim) {
    throw ShapeError("frontend.conv_subsample: frames " + shape_str(frames.shape()) + " vs feat_dim " +
                     std::to_string(cfg_.feat_dim));
  }
  subsampled_length(cfg_, frames.rows());
  Tensor h = frames;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    h = silu(conv_[i].forward(unfold1d(h, cfg_.conv_kernel, cfg_.conv_strides[i], cfg_.conv_pad)));
  }
  return h;
}

Tensor Frontend::encode(const Tensor& hidden) const {
  if (hidden.rows() > cfg_.max_positions) {
    throw std::invalid_argument("frontend: " + std::to_string(hidden.rows()) + " frames exceed max_positions " +
                                std::to_string(cfg_.max_positions));
  }
  Tensor h = add(hidden, slice_rows(positions_, 0, hidden.rows()));
  for (const auto& b : blocks_) h = b.forward(h);
  return h;
}

Tensor Frontend::adapt(const Tensor& hidden) const {
  Tensor mid = adapter_in_.forward(hidden);
  return adapter_out_.forward(adapter_bypass_ ? mid : silu(mid));
}

Tensor Frontend::forward(const AudioFeatureSeq& seq) const {
  seq.validate(cfg_.feat_dim);
  return adapt(encode(conv_subsample(Tensor::from({seq.frames, seq.dim}, seq.values))));
}

std::vector<int> subsampled_labels(const FrontendConfig& cfg, const data::Utterance& u,
                                   std::size_t frames_per_source_token) {
  const std::size_t frames = u.src_tokens.size() * frames_per_source_token;
  const std::size_t n = subsampled_length(cfg, frames);
  const std::size_t factor = cfg.downsample_factor();
  std::vector<int> labels;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t src = std::min(t * factor / frames_per_source_token, u.src_tokens.size() - 1);
    labels.push_back(u.src_tokens[src]);
  }
  return labels;
}

std::vector<WarmupLog> warmup(Frontend& fe, ParamStore& store, const data::Manifest& manifest,
                              data::FeatureStore& features, std::size_t frames_per_source_token, std::size_t epochs,
                              std::size_t batch_utterances, double lr, std::uint64_t seed) {
  if (manifest.items.empty()) throw std::invalid_argument("frontend warmup: empty corpus");
  std::vector<Tensor> params;
  for (const auto& name : store.names()) {
    if (is_frontend_param(name) && name.rfind("frontend.warmup_head.", 0) != 0) params.push_back(store.get(name));
  }
  // The head may live in a scratch store so it stays out of model checkpoints.
  if (!fe.warmup_head().weight().defined()) throw std::logic_error("frontend warmup: no warm-up head attached");
  params.push_back(fe.warmup_head().weight());
  params.push_back(fe.warmup_head().bias());
  AdamWConfig oc;
  oc.lr = lr;
  AdamW opt(params, oc);
  Rng rng(seed);
  std::vector<std::size_t> order(manifest.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<WarmupLog> logs;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t batches = 0, correct = 0, total = 0;
    for (std::size_t at = 0; at < order.size(); at += batch_utterances) {
      const std::size_t end = std::min(order.size(), at + batch_utterances);
      std::vector<Tensor> logits;
      std::vector<int> labels;
      for (std::size_t i = at; i < end; ++i) {
        const auto& u = manifest.items[order[i]];
        logits.push_back(fe.warmup_logits(fe.forward(features.get(u))));
        const auto l = subsampled_labels(fe.config(), u, frames_per_source_token);
        labels.insert(labels.end(), l.begin(), l.end());
      }
      Tensor all = logits.size() == 1 ? logits[0] : concat(logits, 0);
      Tensor loss = cross_entropy(all, labels);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++batches;
      for (std::size_t r = 0; r < all.rows(); ++r) {
        auto row = all.values().subspan(r * all.cols(), all.cols());
        correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[r];
        ++total;
      }
    }
    logs.push_back({epoch, loss_sum / static_cast<double>(batches),
                    static_cast<double>(correct) / static_cast<double>(total)});
  }
  return logs;
}

}  // namespace s2st::frontend
