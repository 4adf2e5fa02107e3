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

#include "s2st/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace s2st::num {

namespace {

double* parent_work(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->work.data() : nullptr;
}

const std::vector<double>& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

void require_matrix(const char* op, const Tensor& x) {
  if (x.dim() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

bool row_broadcast(const Tensor& a, const Tensor& b) {
  return a.dim() == 2 && b.dim() == 1 && b.shape()[0] == a.shape()[1];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double round_half_away(double x) { return x < 0.0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.shape()[1] != b.shape()[0]) shape_fail("matmul", a, b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  kernels::gemm_nn({m, n, k, a.values().data(), b.values().data(), out.data(), false});
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    const double* dc = self.work.data();
    if (double* da = parent_work(self, 0)) {
      kernels::gemm_nt({m, k, n, dc, parent_value(self, 1).data(), da, true});
    }
    if (double* db = parent_work(self, 1)) {
      kernels::gemm_tn({k, n, m, parent_value(self, 0).data(), dc, db, true});
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  if (a.shape()[1] != b.shape()[1]) shape_fail("matmul_nt", a, b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  std::vector<double> out(m * n);
  kernels::gemm_nt({m, n, k, a.values().data(), b.values().data(), out.data(), false});
  return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    const double* dc = self.work.data();
    if (double* da = parent_work(self, 0)) {
      kernels::gemm_nn({m, k, n, dc, parent_value(self, 1).data(), da, true});
    }
    if (double* db = parent_work(self, 1)) {
      kernels::gemm_tn({n, k, m, dc, parent_value(self, 0).data(), db, true});
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (double* d = parent_work(self, p)) {
          for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i];
        }
      }
    });
  }
  if (!row_broadcast(a, b)) shape_fail("add", a, b);
  const std::size_t n = b.size();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i % n);
  return make_result("add", a.shape(), std::move(out), {a, b}, [n](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i];
    }
    if (double* d = parent_work(self, 1)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i % n] += self.work[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i];
    }
    if (double* d = parent_work(self, 1)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] -= self.work[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  if (!same && !row_broadcast(a, b)) shape_fail("mul", a, b);
  const std::size_t n = b.size();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i % n);
  return make_result("mul", a.shape(), std::move(out), {a, b}, [n](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i] * bv[i % n];
    }
    if (double* d = parent_work(self, 1)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i % n] += self.work[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i] * factor;
    }
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + offset;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i];
    }
  });
}

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * sigmoid(x.at(i));
  return make_result("silu", x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& xv = parent_value(self, 0);
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) {
        const double s = sigmoid(xv[i]);
        d[i] += self.work[i] * s * (1.0 + xv[i] * (1.0 - s));
      }
    }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.at(i));
  return make_result("tanh", x.shape(), std::move(out), {x}, [](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) {
        d[i] += self.work[i] * (1.0 - self.value[i] * self.value[i]);
      }
    }
  });
}

Tensor round_ste(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = round_half_away(x.at(i));
  return make_result("round_ste", x.shape(), std::move(out), {x}, [](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.dim() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = x.cols();
  const std::size_t rows = x.size() / n;
  const bool affine = gamma.defined();
  if (affine && (gamma.dim() != 1 || gamma.size() != n)) shape_fail("layer_norm", x, gamma);
  if (beta.defined() && (beta.dim() != 1 || beta.size() != n)) shape_fail("layer_norm", x, beta);

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * rs;
      (*xhat)[r * n + c] = h;
      double y = affine ? h * gamma.at(c) : h;
      if (beta.defined()) y += beta.at(c);
      out[r * n + c] = y;
    }
  }
  std::vector<Tensor> parents{x};
  if (affine) parents.push_back(gamma);
  if (beta.defined()) parents.push_back(beta);
  const bool has_beta = beta.defined();
  return make_result("layer_norm", x.shape(), std::move(out), std::move(parents),
                     [xhat, rstd, n, rows, affine, has_beta](Node& self) {
                       const double* dy = self.work.data();
                       const double* g = affine ? self.parents[1]->value.data() : nullptr;
                       double* dx = parent_work(self, 0);
                       double* dg = affine ? parent_work(self, 1) : nullptr;
                       double* db = has_beta ? parent_work(self, affine ? 2 : 1) : nullptr;
                       std::vector<double> dh(n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* h = xhat->data() + r * n;
                         const double* dyr = dy + r * n;
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t c = 0; c < n; ++c) {
                           dh[c] = g ? dyr[c] * g[c] : dyr[c];
                           m1 += dh[c];
                           m2 += dh[c] * h[c];
                           if (dg) dg[c] += dyr[c] * h[c];
                           if (db) db[c] += dyr[c];
                         }
                         m1 /= static_cast<double>(n);
                         m2 /= static_cast<double>(n);
                         if (dx) {
                           for (std::size_t c = 0; c < n; ++c) {
                             dx[r * n + c] += (*rstd)[r] * (dh[c] - m1 - h[c] * m2);
                           }
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x) {
  if (x.dim() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t n = x.cols();
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.values().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (out[r * n + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= s;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [n, rows](Node& self) {
    double* dx = parent_work(self, 0);
    if (!dx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.work.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.dim() == 0) throw ShapeError("log_softmax: scalar input");
  const std::size_t n = x.cols();
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.values().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = row[c] - lse;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [n, rows](Node& self) {
    double* dx = parent_work(self, 0);
    if (!dx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.work.data() + r * n;
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += dy[c];
      for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += dy[c] - std::exp(y[c]) * s;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore) {
  require_matrix("cross_entropy", logits);
  const std::size_t rows = logits.rows(), n = logits.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.values().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += ((*probs)[r * n + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) (*probs)[r * n + c] /= s;
    if (tgt[r] == ignore) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= n) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[r]) + " outside [0, " +
                              std::to_string(n) + ")");
    }
    total += -(row[tgt[r]] - mx - std::log(s));
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  return make_result("cross_entropy", {}, {total / denom}, {logits},
                     [probs, tgt = std::move(tgt), n, rows, ignore, denom](Node& self) {
                       double* dx = parent_work(self, 0);
                       if (!dx) return;
                       const double g = self.work[0] / denom;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (tgt[r] == ignore) continue;
                         for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += g * (*probs)[r * n + c];
                         dx[r * n + tgt[r]] -= g;
                       }
                     });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mse", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
  const double denom = static_cast<double>(a.size());
  return make_result("mse", {}, {s / denom}, {a, b}, [denom](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    const double g = 2.0 * self.work[0] / denom;
    double* da = parent_work(self, 0);
    double* db = parent_work(self, 1);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = g * (av[i] - bv[i]);
      if (da) da[i] += d;
      if (db) db[i] -= d;
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix("embedding", table);
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(table.rows()));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, rows);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix("gather_rows", x);
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  const std::size_t n = x.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(idx[r]) + " of " +
                              shape_str(x.shape()));
    }
    std::copy_n(x.values().data() + idx[r] * n, n, out.data() + r * n);
  }
  const std::size_t m = idx.size();
  return make_result("gather_rows", {m, n}, std::move(out), {x}, [idx = std::move(idx), n](Node& self) {
    double* dx = parent_work(self, 0);
    if (!dx) return;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < n; ++c) dx[idx[r] * n + c] += self.work[r * n + c];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_matrix("concat", p);
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  if (parts.size() == 1) return parts[0];
  if (axis == 0) {
    const std::size_t n = parts[0].cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
      if (p.cols() != n) shape_fail("concat", parts[0], p);
      rows += p.rows();
    }
    std::vector<double> out;
    out.reserve(rows * n);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return make_result("concat", {rows, n}, std::move(out), parts, [](Node& self) {
      std::size_t at = 0;
      for (std::size_t p = 0; p < self.parents.size(); ++p) {
        const std::size_t len = self.parents[p]->value.size();
        if (double* d = parent_work(self, p)) {
          for (std::size_t i = 0; i < len; ++i) d[i] += self.work[at + i];
        }
        at += len;
      }
    });
  }
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_fail("concat", parts[0], p);
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.values().data() + r * w, w, out.data() + r * cols + off);
    }
    off += w;
  }
  return make_result("concat", {rows, cols}, std::move(out), parts, [rows, cols](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t w = self.parents[p]->shape[1];
      if (double* d = parent_work(self, p)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) d[r * w + c] += self.work[r * cols + off + c];
        }
      }
      off += w;
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix("slice_rows", x);
  if (count == 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(x.shape()));
  }
  const std::size_t n = x.cols();
  std::vector<double> out(x.values().begin() + begin * n, x.values().begin() + (begin + count) * n);
  return make_result("slice_rows", {count, n}, std::move(out), {x}, [begin, n](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[begin * n + i] += self.work[i];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix("slice_cols", x);
  if (count == 0 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.values().data() + r * n + begin, count, out.data() + r * count);
  }
  return make_result("slice_cols", {rows, count}, std::move(out), {x}, [rows, n, begin, count](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) d[r * n + begin + c] += self.work[r * count + c];
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_matrix("transpose", x);
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.values()[i * n + j];
  }
  return make_result("transpose", {n, m}, std::move(out), {x}, [m, n](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += self.work[j * m + i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) d[i] += self.work[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result("sum", {}, {s}, {x}, [](Node& self) {
    if (double* d = parent_work(self, 0)) {
      const std::size_t len = self.parents[0]->value.size();
      for (std::size_t i = 0; i < len; ++i) d[i] += self.work[0];
    }
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean(const Tensor& x, std::size_t axis) {
  require_matrix("mean", x);
  if (axis > 1) throw ShapeError("mean: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t outn = axis == 0 ? n : m;
  const double inv = 1.0 / static_cast<double>(axis == 0 ? m : n);
  std::vector<double> out(outn, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += x.values()[i * n + j];
  }
  for (auto& v : out) v *= inv;
  return make_result("mean", {outn}, std::move(out), {x}, [m, n, axis, inv](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += self.work[axis == 0 ? j : i] * inv;
      }
    }
  });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != x.size()) {
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for " +
                     shape_str(x.shape()));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] ? value : x.at(i);
  return make_result("masked_fill", x.shape(), std::move(out), {x}, [m = std::move(m)](Node& self) {
    if (double* d = parent_work(self, 0)) {
      for (std::size_t i = 0; i < self.work.size(); ++i) {
        if (!m[i]) d[i] += self.work[i];
      }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 std::span<const kernels::AttnSegment> segments, bool causal) {
  require_matrix("attention", q);
  require_matrix("attention", k);
  require_matrix("attention", v);
  const std::size_t dim = q.cols();
  if (k.cols() != dim) shape_fail("attention", q, k);
  if (v.shape() != k.shape()) shape_fail("attention", k, v);
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  std::vector<kernels::AttnSegment> segs(segments.begin(), segments.end());
  for (const auto& s : segs) {
    if (s.q_len == 0 || s.k_len == 0 || s.q_begin + s.q_len > q.rows() || s.k_begin + s.k_len > k.rows() ||
        (causal && s.q_len > s.k_len)) {
      throw ShapeError("attention: segment out of range for q " + shape_str(q.shape()) + ", k " +
                       shape_str(k.shape()));
    }
  }
  auto probs = std::make_shared<std::vector<double>>(kernels::attn_prob_size(segs, heads));
  std::vector<double> out(q.size(), 0.0);
  kernels::AttnArgs args{segs, heads, dim, causal, q.values().data(), k.values().data(), v.values().data()};
  kernels::attention(args, out.data(), probs->data());
  return make_result("attention", q.shape(), std::move(out), {q, k, v},
                     [probs, segs = std::move(segs), heads, dim, causal](Node& self) {
                       kernels::AttnArgs fwd{segs, heads, dim, causal, parent_value(self, 0).data(),
                                             parent_value(self, 1).data(), parent_value(self, 2).data()};
                       kernels::attention_backward({fwd, probs->data(), self.work.data(), parent_work(self, 0),
                                                    parent_work(self, 1), parent_work(self, 2)});
                     });
}

Tensor unfold1d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require_matrix("unfold1d", x);
  const std::size_t t = x.rows(), c = x.cols();
  if (kernel == 0 || stride == 0) throw ShapeError("unfold1d: kernel and stride must be positive");
  if (t + 2 * pad < kernel) {
    throw ShapeError("unfold1d: length " + std::to_string(t) + " shorter than kernel " + std::to_string(kernel) +
                     " with padding " + std::to_string(pad));
  }
  const std::size_t tout = (t + 2 * pad - kernel) / stride + 1;
  const std::size_t w = kernel * c;
  std::vector<double> out(tout * w, 0.0);
  for (std::size_t o = 0; o < tout; ++o) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + j) - static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      std::copy_n(x.values().data() + src * c, c, out.data() + o * w + j * c);
    }
  }
  return make_result("unfold1d", {tout, w}, std::move(out), {x}, [t, c, tout, w, kernel, stride, pad](Node& self) {
    double* d = parent_work(self, 0);
    if (!d) return;
    for (std::size_t o = 0; o < tout; ++o) {
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + j) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        for (std::size_t k = 0; k < c; ++k) d[src * c + k] += self.work[o * w + j * c + k];
      }
    }
  });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight) {
  require_matrix("depthwise_conv1d", x);
  require_matrix("depthwise_conv1d", weight);
  const std::size_t t = x.rows(), c = x.cols(), kw = weight.rows();
  if (weight.cols() != c || kw % 2 == 0) shape_fail("depthwise_conv1d", x, weight);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kw / 2);
  std::vector<double> out(t * c, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < kw; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += weight.values()[j * c + k] * x.values()[src * c + k];
    }
  }
  return make_result("depthwise_conv1d", {t, c}, std::move(out), {x, weight}, [t, c, kw, half](Node& self) {
    const auto& xv = parent_value(self, 0);
    const auto& wv = parent_value(self, 1);
    double* dx = parent_work(self, 0);
    double* dw = parent_work(self, 1);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        for (std::size_t k = 0; k < c; ++k) {
          const double g = self.work[i * c + k];
          if (dx) dx[src * c + k] += g * wv[j * c + k];
          if (dw) dw[j * c + k] += g * xv[src * c + k];
        }
      }
    }
  });
}

}  // namespace s2st::num
