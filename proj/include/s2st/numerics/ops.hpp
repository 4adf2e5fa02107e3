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

// Differentiable ops. Matrices are 2-D row-major; "row broadcast" means a
// 1-D operand whose length equals the last axis of the 2-D operand.
// The nonlinearity of record is SiLU (x * sigmoid(x)).

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "s2st/numerics/kernels.hpp"
#include "s2st/numerics/tensor.hpp"

namespace s2st::num {

inline constexpr double kLayerNormEps = 1e-5;

Tensor matmul(const Tensor& a, const Tensor& b);     // [M,K] x [K,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M,K] x [N,K]^T

Tensor add(const Tensor& a, const Tensor& b);  // equal shapes or row broadcast
Tensor sub(const Tensor& a, const Tensor& b);  // equal shapes
Tensor mul(const Tensor& a, const Tensor& b);  // equal shapes or row broadcast
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor silu(const Tensor& x);
Tensor tanh(const Tensor& x);
// Round half away from zero; backward is the identity (straight-through).
Tensor round_ste(const Tensor& x);

// Normalizes over the last axis with denominator sqrt(var + eps). Constant
// rows become zeros before the affine. gamma/beta may be undefined.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

Tensor softmax(const Tensor& x);  // last axis
Tensor log_softmax(const Tensor& x);

// Mean negative log-likelihood over rows whose target is not `ignore`.
// Returns 0 (with zero gradient) when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore = -1);

Tensor mse(const Tensor& a, const Tensor& b);

Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);  // 2-D only

// Entries whose mask byte is nonzero become `value` and receive no gradient.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);

// Fused multi-head scaled dot-product attention over packed segments.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::span<const kernels::AttnSegment> segments, bool causal);

// out[t, j*C + c] = x[t*stride + j - pad, c], zero outside [0, T).
// Output length floor((T + 2*pad - kernel) / stride) + 1.
Tensor unfold1d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad);

// Same-length depthwise convolution over time, centered kernel (odd width).
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight);

}  // namespace s2st::num
