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

#include <span>
#include <string>
#include <vector>

#include "s2st/numerics/ops.hpp"
#include "s2st/numerics/params.hpp"

namespace s2st::nn {

using num::Tensor;

// y = x W + b with W stored [in, out]. A low-rank adapter, when attached,
// adds (alpha / rank) * B (A x) with A [rank, in] and B [out, rank]; B starts
// at zero so the adapted map equals the base map at attach time.
class Linear {
 public:
  Linear() = default;
  Linear(num::ParamStore& store, const std::string& name, std::size_t in, std::size_t out, num::Rng& rng,
         bool bias = true, double init_std = -1.0);

  Tensor forward(const Tensor& x) const;
  void attach_lora(num::ParamStore& store, std::size_t rank, double alpha, num::Rng& rng);

  bool has_lora() const { return lora_a_.defined(); }
  double lora_scaling() const { return lora_scaling_; }
  // W + scaling * (B A)^T in the [in, out] storage layout; detached.
  Tensor merged_weight() const;

  const std::string& name() const { return name_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const Tensor& lora_a() const { return lora_a_; }
  const Tensor& lora_b() const { return lora_b_; }

 private:
  std::string name_;
  std::size_t in_ = 0, out_ = 0;
  Tensor weight_, bias_, lora_a_, lora_b_;
  double lora_scaling_ = 0.0;
};

// Adapted forward with explicit operands: x W + b + scaling * (x A^T) B^T.
Tensor lora_apply(const Tensor& x, const Tensor& weight, const Tensor& bias, const Tensor& a, const Tensor& b,
                  double scaling);
// Merged [in, out] weight W + scaling * (B A)^T.
Tensor lora_merge(const Tensor& weight, const Tensor& a, const Tensor& b, double scaling);

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(num::ParamStore& store, const std::string& name, std::size_t dim);
  Tensor forward(const Tensor& x) const { return num::layer_norm(x, gamma_, beta_); }

 private:
  Tensor gamma_, beta_;
};

// Cached keys/values of one attention layer for incremental decoding.
struct KvCache {
  Tensor keys, values;
  std::size_t length() const { return keys.defined() ? keys.rows() : 0; }
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(num::ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                     num::Rng& rng);

  // Self-attention over packed sequences of the given lengths.
  Tensor forward(const Tensor& x, std::span<const std::size_t> lengths, bool causal) const;
  // Causal self-attention of new rows against cache + new rows; grows cache.
  Tensor step(const Tensor& x, KvCache& cache) const;

  std::vector<Linear*> linears() { return {&q_, &k_, &v_, &o_}; }

 private:
  std::size_t heads_ = 1;
  Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(num::ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden, num::Rng& rng);
  Tensor forward(const Tensor& x) const { return down_.forward(num::silu(up_.forward(x))); }
  std::vector<Linear*> linears() { return {&up_, &down_}; }

 private:
  Linear up_, down_;
};

struct BlockConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
};

// Pre-norm causal decoder layer.
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(num::ParamStore& store, const std::string& name, const BlockConfig& cfg, num::Rng& rng);

  Tensor forward(const Tensor& x, std::span<const std::size_t> lengths) const;
  Tensor step(const Tensor& x, KvCache& cache) const;
  void attach_lora(num::ParamStore& store, std::size_t rank, double alpha, num::Rng& rng);

 private:
  LayerNorm ln_attn_, ln_ff_;
  MultiHeadAttention attn_;
  FeedForward ff_;
};

// Conformer block: half FFN, self-attention, depthwise-conv module, half FFN,
// each with a residual around a pre-norm, followed by a final norm.
class ConformerBlock {
 public:
  ConformerBlock() = default;
  ConformerBlock(num::ParamStore& store, const std::string& name, const BlockConfig& cfg, std::size_t conv_kernel,
                 num::Rng& rng);
  // Single unmasked sequence [T, dim].
  Tensor forward(const Tensor& x) const;

 private:
  LayerNorm ln_ff1_, ln_attn_, ln_conv_, ln_ff2_, ln_out_;
  FeedForward ff1_, ff2_;
  MultiHeadAttention attn_;
  Linear pw_in_, pw_out_;
  Tensor depthwise_;
};

}  // namespace s2st::nn
