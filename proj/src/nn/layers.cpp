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

#include "s2st/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace s2st::nn {

using namespace s2st::num;

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias,
               double init_std)
    : name_(name), in_(in), out_(out) {
  const double stddev = init_std >= 0.0 ? init_std : 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = store.add(name + ".weight", init::normal(rng, {in, out}, stddev));
  if (bias) bias_ = store.add(name + ".bias", init::constant({out}, 0.0));
}

Tensor lora_apply(const Tensor& x, const Tensor& weight, const Tensor& bias, const Tensor& a, const Tensor& b,
                  double scaling) {
  Tensor y = matmul(x, weight);
  if (bias.defined()) y = add(y, bias);
  if (a.defined()) {
    if (a.rows() != b.cols() || a.cols() != weight.rows() || b.rows() != weight.cols()) {
      throw ShapeError("lora: adapter A " + shape_str(a.shape()) + " / B " + shape_str(b.shape()) +
                       " do not fit weight " + shape_str(weight.shape()));
    }
    y = add(y, scale(matmul_nt(matmul_nt(x, a), b), scaling));
  }
  return y;
}

Tensor lora_merge(const Tensor& weight, const Tensor& a, const Tensor& b, double scaling) {
  if (a.rows() != b.cols() || a.cols() != weight.rows() || b.rows() != weight.cols()) {
    throw ShapeError("lora_merge: adapter A " + shape_str(a.shape()) + " / B " + shape_str(b.shape()) +
                     " do not fit weight " + shape_str(weight.shape()));
  }
  NoGradGuard no_grad;
  // (B A)^T = A^T B^T, shape [in, out].
  Tensor delta = matmul_nt(transpose(a), b);
  return add(weight, scale(delta, scaling)).detach();
}

Tensor Linear::forward(const Tensor& x) const {
  return lora_apply(x, weight_, bias_, lora_a_, lora_b_, lora_scaling_);
}

void Linear::attach_lora(ParamStore& store, std::size_t rank, double alpha, Rng& rng) {
  if (rank == 0) throw std::invalid_argument("lora: rank must be positive");
  if (has_lora()) throw std::logic_error("lora: adapter already attached to " + name_);
  lora_a_ = store.add(name_ + ".lora_a", init::normal(rng, {rank, in_}, 1.0 / std::sqrt(static_cast<double>(in_))));
  lora_b_ = store.add(name_ + ".lora_b", init::constant({out_, rank}, 0.0));
  lora_scaling_ = alpha / static_cast<double>(rank);
}

Tensor Linear::merged_weight() const {
  if (!has_lora()) return weight_.detach();
  return lora_merge(weight_, lora_a_, lora_b_, lora_scaling_);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim) {
  gamma_ = store.add(name + ".gamma", init::constant({dim}, 1.0));
  beta_ = store.add(name + ".beta", init::constant({dim}, 0.0));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim,
                                       std::size_t heads, Rng& rng)
    : heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  q_ = Linear(store, name + ".q", dim, dim, rng);
  // No key bias: softmax is invariant to it, so it would never train.
  k_ = Linear(store, name + ".k", dim, dim, rng, false);
  v_ = Linear(store, name + ".v", dim, dim, rng);
  o_ = Linear(store, name + ".o", dim, dim, rng, true, 0.5 / std::sqrt(static_cast<double>(dim)));
}

Tensor MultiHeadAttention::forward(const Tensor& x, std::span<const std::size_t> lengths, bool causal) const {
  std::vector<kernels::AttnSegment> segments;
  std::size_t at = 0;
  for (auto len : lengths) {
    segments.push_back({at, len, at, len});
    at += len;
  }
  if (at != x.rows()) {
    throw ShapeError("attention: segment lengths cover " + std::to_string(at) + " rows of " + shape_str(x.shape()));
  }
  Tensor ctx = attention(q_.forward(x), k_.forward(x), v_.forward(x), heads_, segments, causal);
  return o_.forward(ctx);
}

Tensor MultiHeadAttention::step(const Tensor& x, KvCache& cache) const {
  Tensor k_new = k_.forward(x);
  Tensor v_new = v_.forward(x);
  if (cache.length() == 0) {
    cache.keys = k_new;
    cache.values = v_new;
  } else {
    cache.keys = concat({cache.keys, k_new}, 0);
    cache.values = concat({cache.values, v_new}, 0);
  }
  const std::size_t total = cache.length();
  const kernels::AttnSegment seg{0, x.rows(), 0, total};
  Tensor ctx = attention(q_.forward(x), cache.keys, cache.values, heads_, std::span(&seg, 1), true);
  return o_.forward(ctx);
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng) {
  up_ = Linear(store, name + ".up", dim, hidden, rng);
  down_ = Linear(store, name + ".down", hidden, dim, rng, true, 0.5 / std::sqrt(static_cast<double>(hidden)));
}

DecoderBlock::DecoderBlock(ParamStore& store, const std::string& name, const BlockConfig& cfg, Rng& rng) {
  ln_attn_ = LayerNorm(store, name + ".ln_attn", cfg.dim);
  attn_ = MultiHeadAttention(store, name + ".attn", cfg.dim, cfg.heads, rng);
  ln_ff_ = LayerNorm(store, name + ".ln_ff", cfg.dim);
  ff_ = FeedForward(store, name + ".ff", cfg.dim, cfg.ff_dim, rng);
}

Tensor DecoderBlock::forward(const Tensor& x, std::span<const std::size_t> lengths) const {
  Tensor h = add(x, attn_.forward(ln_attn_.forward(x), lengths, true));
  return add(h, ff_.forward(ln_ff_.forward(h)));
}

Tensor DecoderBlock::step(const Tensor& x, KvCache& cache) const {
  Tensor h = add(x, attn_.step(ln_attn_.forward(x), cache));
  return add(h, ff_.forward(ln_ff_.forward(h)));
}

void DecoderBlock::attach_lora(ParamStore& store, std::size_t rank, double alpha, Rng& rng) {
  for (Linear* l : attn_.linears()) l->attach_lora(store, rank, alpha, rng);
  for (Linear* l : ff_.linears()) l->attach_lora(store, rank, alpha, rng);
}

ConformerBlock::ConformerBlock(ParamStore& store, const std::string& name, const BlockConfig& cfg,
                               std::size_t conv_kernel, Rng& rng) {
  if (conv_kernel % 2 == 0) throw std::invalid_argument("conformer: depthwise kernel must be odd");
  ln_ff1_ = LayerNorm(store, name + ".ln_ff1", cfg.dim);
  ff1_ = FeedForward(store, name + ".ff1", cfg.dim, cfg.ff_dim, rng);
  ln_attn_ = LayerNorm(store, name + ".ln_attn", cfg.dim);
  attn_ = MultiHeadAttention(store, name + ".attn", cfg.dim, cfg.heads, rng);
  ln_conv_ = LayerNorm(store, name + ".ln_conv", cfg.dim);
  pw_in_ = Linear(store, name + ".conv.pw_in", cfg.dim, cfg.dim, rng);
  depthwise_ = store.add(name + ".conv.depthwise",
                         init::normal(rng, {conv_kernel, cfg.dim}, 1.0 / std::sqrt(static_cast<double>(conv_kernel))));
  pw_out_ = Linear(store, name + ".conv.pw_out", cfg.dim, cfg.dim, rng, true,
                   0.5 / std::sqrt(static_cast<double>(cfg.dim)));
  ln_ff2_ = LayerNorm(store, name + ".ln_ff2", cfg.dim);
  ff2_ = FeedForward(store, name + ".ff2", cfg.dim, cfg.ff_dim, rng);
  ln_out_ = LayerNorm(store, name + ".ln_out", cfg.dim);
}

Tensor ConformerBlock::forward(const Tensor& x) const {
  const std::size_t len = x.rows();
  Tensor h = add(x, scale(ff1_.forward(ln_ff1_.forward(x)), 0.5));
  h = add(h, attn_.forward(ln_attn_.forward(h), std::span(&len, 1), false));
  Tensor conv = pw_out_.forward(silu(depthwise_conv1d(pw_in_.forward(ln_conv_.forward(h)), depthwise_)));
  h = add(h, conv);
  h = add(h, scale(ff2_.forward(ln_ff2_.forward(h)), 0.5));
  return ln_out_.forward(h);
}

}  // namespace s2st::nn
