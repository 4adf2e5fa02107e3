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

// Dense kernels behind the tensor ops. Every kernel has a plain serial
// reference and an OpenMP version. The two keep the same per-element
// summation order, so their results are bit-identical; tests rely on that.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace s2st::num::kernels {

// Row-major C[M,N] (+)= A[M,K] * B[K,N].
struct GemmArgs {
  std::size_t m, n, k;
  const double* a;
  const double* b;
  double* c;
  bool accumulate;
};

// One attention problem inside a packed batch: query rows
// [q_begin, q_begin+q_len) attend key rows [k_begin, k_begin+k_len).
// With causal masking, local query i sees keys j <= i + (k_len - q_len).
struct AttnSegment {
  std::size_t q_begin, q_len, k_begin, k_len;
};

struct AttnArgs {
  std::span<const AttnSegment> segments;
  std::size_t heads;
  std::size_t dim;  // model width; head width is dim / heads
  bool causal;
  const double* q;  // [Nq, dim]
  const double* k;  // [Nk, dim]
  const double* v;  // [Nk, dim]
};

// Probabilities are stored per (segment, head) block, row-major q_len x k_len,
// blocks laid out in segment-major then head order.
std::size_t attn_prob_size(std::span<const AttnSegment> segments, std::size_t heads);

struct AttnGradArgs {
  AttnArgs fwd;
  const double* probs;
  const double* dout;  // [Nq, dim]
  double* dq;          // accumulated, may be null
  double* dk;
  double* dv;
};

namespace serial {
void gemm_nn(const GemmArgs& g);
// C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nt(const GemmArgs& g);
// C[M,N] (+)= A[K,M]^T * B[K,N]
void gemm_tn(const GemmArgs& g);
void attention(const AttnArgs& args, double* out, double* probs);
void attention_backward(const AttnGradArgs& args);
}  // namespace serial

namespace omp {
void gemm_nn(const GemmArgs& g);
void gemm_nt(const GemmArgs& g);
void gemm_tn(const GemmArgs& g);
void attention(const AttnArgs& args, double* out, double* probs);
void attention_backward(const AttnGradArgs& args);
}  // namespace omp

// Dispatch used by the tensor ops. Defaults to the OpenMP kernels when the
// build has OpenMP; the serial path stays selectable for tests and benches.
void set_parallel(bool enabled);
bool parallel_enabled();
bool openmp_available();
int max_threads();

void gemm_nn(const GemmArgs& g);
void gemm_nt(const GemmArgs& g);
void gemm_tn(const GemmArgs& g);
void attention(const AttnArgs& args, double* out, double* probs);
void attention_backward(const AttnGradArgs& args);

}  // namespace s2st::num::kernels
