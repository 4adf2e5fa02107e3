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

#include "s2st/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace s2st::num::kernels {

namespace {

#ifdef _OPENMP
bool g_parallel = true;
#else
bool g_parallel = false;
#endif

// Small problems are not worth a parallel region. Results do not depend on
// this threshold since both paths share summation order.
constexpr std::size_t kParallelMinWork = 1 << 14;

std::size_t visible_keys(const AttnSegment& s, std::size_t i, bool causal) {
  if (!causal) return s.k_len;
  return std::min(s.k_len, i + (s.k_len - s.q_len) + 1);
}

std::vector<std::size_t> prob_offsets(std::span<const AttnSegment> segments, std::size_t heads) {
  std::vector<std::size_t> offsets(segments.size() * heads + 1, 0);
  std::size_t at = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      offsets[s * heads + h] = at;
      at += segments[s].q_len * segments[s].k_len;
    }
  }
  offsets.back() = at;
  return offsets;
}

// Shared per-(segment, head) bodies. The serial and OpenMP drivers differ
// only in how these blocks are scheduled.
void attention_block(const AttnArgs& a, const AttnSegment& s, std::size_t h, double* out,
                     double* probs) {
  const std::size_t hd = a.dim / a.heads;
  const std::size_t col = h * hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t i = 0; i < s.q_len; ++i) {
    const double* qi = a.q + (s.q_begin + i) * a.dim + col;
    double* p = probs + i * s.k_len;
    std::fill(p, p + s.k_len, 0.0);
    const std::size_t lim = visible_keys(s, i, a.causal);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < lim; ++j) {
      const double* kj = a.k + (s.k_begin + j) * a.dim + col;
      double dot = 0.0;
      for (std::size_t d = 0; d < hd; ++d) dot += qi[d] * kj[d];
      p[j] = dot * scale;
      mx = std::max(mx, p[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < lim; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < lim; ++j) p[j] /= sum;
    double* oi = out + (s.q_begin + i) * a.dim + col;
    std::fill(oi, oi + hd, 0.0);
    for (std::size_t j = 0; j < lim; ++j) {
      const double* vj = a.v + (s.k_begin + j) * a.dim + col;
      for (std::size_t d = 0; d < hd; ++d) oi[d] += p[j] * vj[d];
    }
  }
}

void attention_backward_block(const AttnGradArgs& g, const AttnSegment& s, std::size_t h,
                              const double* probs, std::vector<double>& dp) {
  const AttnArgs& a = g.fwd;
  const std::size_t hd = a.dim / a.heads;
  const std::size_t col = h * hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  dp.assign(s.k_len, 0.0);
  for (std::size_t i = 0; i < s.q_len; ++i) {
    const std::size_t lim = visible_keys(s, i, a.causal);
    const double* p = probs + i * s.k_len;
    const double* doi = g.dout + (s.q_begin + i) * a.dim + col;
    const double* qi = a.q + (s.q_begin + i) * a.dim + col;
    double rowdot = 0.0;
    for (std::size_t j = 0; j < lim; ++j) {
      const double* vj = a.v + (s.k_begin + j) * a.dim + col;
      double dot = 0.0;
      for (std::size_t d = 0; d < hd; ++d) dot += doi[d] * vj[d];
      dp[j] = dot;
      rowdot += p[j] * dot;
    }
    for (std::size_t j = 0; j < lim; ++j) {
      const double ds = p[j] * (dp[j] - rowdot) * scale;
      const std::size_t krow = (s.k_begin + j) * a.dim + col;
      if (g.dq) {
        double* dqi = g.dq + (s.q_begin + i) * a.dim + col;
        for (std::size_t d = 0; d < hd; ++d) dqi[d] += ds * a.k[krow + d];
      }
      if (g.dk) {
        for (std::size_t d = 0; d < hd; ++d) g.dk[krow + d] += ds * qi[d];
      }
      if (g.dv) {
        for (std::size_t d = 0; d < hd; ++d) g.dv[krow + d] += p[j] * doi[d];
      }
    }
  }
}

}  // namespace

std::size_t attn_prob_size(std::span<const AttnSegment> segments, std::size_t heads) {
  return prob_offsets(segments, heads).back();
}

namespace serial {

void gemm_nn(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      double s = g.accumulate ? g.c[i * g.n + j] : 0.0;
      for (std::size_t k = 0; k < g.k; ++k) s += g.a[i * g.k + k] * g.b[k * g.n + j];
      g.c[i * g.n + j] = s;
    }
  }
}

void gemm_nt(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      double s = g.accumulate ? g.c[i * g.n + j] : 0.0;
      for (std::size_t k = 0; k < g.k; ++k) s += g.a[i * g.k + k] * g.b[j * g.k + k];
      g.c[i * g.n + j] = s;
    }
  }
}

void gemm_tn(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      double s = g.accumulate ? g.c[i * g.n + j] : 0.0;
      for (std::size_t k = 0; k < g.k; ++k) s += g.a[k * g.m + i] * g.b[k * g.n + j];
      g.c[i * g.n + j] = s;
    }
  }
}

void attention(const AttnArgs& args, double* out, double* probs) {
  auto offsets = prob_offsets(args.segments, args.heads);
  for (std::size_t s = 0; s < args.segments.size(); ++s) {
    for (std::size_t h = 0; h < args.heads; ++h) {
      attention_block(args, args.segments[s], h, out, probs + offsets[s * args.heads + h]);
    }
  }
}

void attention_backward(const AttnGradArgs& args) {
  auto offsets = prob_offsets(args.fwd.segments, args.fwd.heads);
  std::vector<double> dp;
  for (std::size_t s = 0; s < args.fwd.segments.size(); ++s) {
    for (std::size_t h = 0; h < args.fwd.heads; ++h) {
      attention_backward_block(args, args.fwd.segments[s], h,
                               args.probs + offsets[s * args.fwd.heads + h], dp);
    }
  }
}

}  // namespace serial

namespace omp {

// Row-streaming (i-k-j) form: each output row is owned by one thread and its
// elements accumulate over k in ascending order, as in the reference.
void gemm_nn(const GemmArgs& g) {
  const auto m = static_cast<std::ptrdiff_t>(g.m);
#pragma omp parallel for schedule(static) if (g.m * g.n * g.k >= kParallelMinWork)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    double* c = g.c + i * g.n;
    if (!g.accumulate) std::fill(c, c + g.n, 0.0);
    const double* arow = g.a + i * g.k;
    for (std::size_t k = 0; k < g.k; ++k) {
      const double a = arow[k];
      const double* b = g.b + k * g.n;
      for (std::size_t j = 0; j < g.n; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_nt(const GemmArgs& g) {
  // Transposing B is a pure copy; the arithmetic order is unchanged.
  std::vector<double> bt(g.k * g.n);
  for (std::size_t j = 0; j < g.n; ++j) {
    for (std::size_t k = 0; k < g.k; ++k) bt[k * g.n + j] = g.b[j * g.k + k];
  }
  GemmArgs nn = g;
  nn.b = bt.data();
  omp::gemm_nn(nn);
}

void gemm_tn(const GemmArgs& g) {
  const auto m = static_cast<std::ptrdiff_t>(g.m);
#pragma omp parallel for schedule(static) if (g.m * g.n * g.k >= kParallelMinWork)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    double* c = g.c + i * g.n;
    if (!g.accumulate) std::fill(c, c + g.n, 0.0);
    for (std::size_t k = 0; k < g.k; ++k) {
      const double a = g.a[k * g.m + i];
      const double* b = g.b + k * g.n;
      for (std::size_t j = 0; j < g.n; ++j) c[j] += a * b[j];
    }
  }
}

void attention(const AttnArgs& args, double* out, double* probs) {
  auto offsets = prob_offsets(args.segments, args.heads);
  const auto blocks = static_cast<std::ptrdiff_t>(args.segments.size() * args.heads);
#pragma omp parallel for schedule(dynamic) if (blocks > 1 && offsets.back() * args.dim >= kParallelMinWork)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t s = static_cast<std::size_t>(b) / args.heads;
    const std::size_t h = static_cast<std::size_t>(b) % args.heads;
    attention_block(args, args.segments[s], h, out, probs + offsets[b]);
  }
}

// Blocks write disjoint columns (per head) of disjoint key rows (per segment),
// which holds for packed self-attention batches.
void attention_backward(const AttnGradArgs& args) {
  const AttnArgs& a = args.fwd;
  auto offsets = prob_offsets(a.segments, a.heads);
  const auto blocks = static_cast<std::ptrdiff_t>(a.segments.size() * a.heads);
#pragma omp parallel if (blocks > 1 && offsets.back() * a.dim >= kParallelMinWork)
  {
    std::vector<double> dp;
#pragma omp for schedule(dynamic)
    for (std::ptrdiff_t b = 0; b < blocks; ++b) {
      const std::size_t s = static_cast<std::size_t>(b) / a.heads;
      const std::size_t h = static_cast<std::size_t>(b) % a.heads;
      attention_backward_block(args, a.segments[s], h, args.probs + offsets[b], dp);
    }
  }
}

}  // namespace omp

void set_parallel(bool enabled) { g_parallel = enabled && openmp_available(); }
bool parallel_enabled() { return g_parallel; }

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(const GemmArgs& g) { g_parallel ? omp::gemm_nn(g) : serial::gemm_nn(g); }
void gemm_nt(const GemmArgs& g) { g_parallel ? omp::gemm_nt(g) : serial::gemm_nt(g); }
void gemm_tn(const GemmArgs& g) { g_parallel ? omp::gemm_tn(g) : serial::gemm_tn(g); }

void attention(const AttnArgs& args, double* out, double* probs) {
  g_parallel ? omp::attention(args, out, probs) : serial::attention(args, out, probs);
}

void attention_backward(const AttnGradArgs& args) {
  g_parallel ? omp::attention_backward(args) : serial::attention_backward(args);
}

}  // namespace s2st::num::kernels
