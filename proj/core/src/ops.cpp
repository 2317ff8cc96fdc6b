// SPDX-License-Identifier: Apache-2.0
#include "est/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "blas.hpp"
#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

using detail::gemm;
using detail::Trans;

namespace {

using Grad = std::span<const Real>;

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw StateError(std::string(op) + ": operands live on different tapes");
}

void require_matrix(Var a, const char* op) {
  if (a.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(a.shape()));
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

constexpr Real kGeluC = Real(0.044715);
const Real kSqrt2OverPi = static_cast<Real>(std::sqrt(2.0 / std::numbers::pi));

// 0.5 * (1 + tanh(u)) written as a logistic in 2u, evaluated without cancellation in either tail.
Real half_one_plus_tanh(Real u) {
  if (u >= Real(0)) return Real(1) / (Real(1) + std::exp(Real(-2) * u));
  const Real e = std::exp(Real(2) * u);
  return e / (Real(1) + e);
}

}  // namespace

Real gelu_value(Real x) {
  const Real u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  return x * half_one_plus_tanh(u);
}

Real gelu_derivative(Real x) {
  const Real u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  const Real s = half_one_plus_tanh(u);
  const Real s_neg = half_one_plus_tanh(-u);
  const Real du = kSqrt2OverPi * (Real(1) + Real(3) * kGeluC * x * x);
  return s * (Real(1) + Real(2) * x * s_neg * du);
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Var vars[] = {a, b};
  return a.tape().record(std::move(out), vars, [ia = a.id(), ib = b.id()](Tape& t, const Tensor&, Grad g) {
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto dst = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Var vars[] = {a, b};
  return a.tape().record(std::move(out), vars, [ia = a.id(), ib = b.id()](Tape& t, const Tensor&, Grad g) {
    const auto& x = t.value(ia);
    const auto& y = t.value(ib);
    if (t.requires_grad(ia)) {
      auto dst = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      auto dst = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, Real factor) {
  const auto& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  Var vars[] = {a};
  return a.tape().record(std::move(out), vars, [ia = a.id(), factor](Tape& t, const Tensor&, Grad g) {
    auto dst = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

Var sum(Var a) {
  Real total = 0;
  for (Real x : a.value().data()) total += x;
  Var vars[] = {a};
  return a.tape().record(Tensor({1}, total), vars, [ia = a.id()](Tape& t, const Tensor&, Grad g) {
    for (Real& d : t.grad(ia)) d += g[0];
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  gemm(Trans::kNo, Trans::kNo, m, n, k, 1, a.value().ptr(), k, b.value().ptr(), n, 0, out.ptr(), n);
  Var vars[] = {a, b};
  return a.tape().record(std::move(out), vars, [ia = a.id(), ib = b.id(), m, k, n](Tape& t, const Tensor&, Grad g) {
    if (t.requires_grad(ia)) {
      // dA += G . B^T
      gemm(Trans::kNo, Trans::kYes, m, k, n, 1, g.data(), n, t.value(ib).ptr(), n, 1, t.grad(ia).data(), k);
    }
    if (t.requires_grad(ib)) {
      // dB += A^T . G
      gemm(Trans::kYes, Trans::kNo, k, n, m, 1, t.value(ia).ptr(), k, g.data(), n, 1, t.grad(ib).data(), n);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b, "matmul_nt");
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()) + "^T");
  }
  Tensor out({m, n});
  gemm(Trans::kNo, Trans::kYes, m, n, k, 1, a.value().ptr(), k, b.value().ptr(), k, 0, out.ptr(), n);
  Var vars[] = {a, b};
  return a.tape().record(std::move(out), vars, [ia = a.id(), ib = b.id(), m, k, n](Tape& t, const Tensor&, Grad g) {
    if (t.requires_grad(ia)) {
      // dA += G . B
      gemm(Trans::kNo, Trans::kNo, m, k, n, 1, g.data(), n, t.value(ib).ptr(), k, 1, t.grad(ia).data(), k);
    }
    if (t.requires_grad(ib)) {
      // dB += G^T . A
      gemm(Trans::kYes, Trans::kNo, n, k, m, 1, g.data(), n, t.value(ia).ptr(), k, 1, t.grad(ib).data(), k);
    }
  });
}

Var softmax_rows(Var x) {
  require_matrix(x, "softmax_rows");
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const Real* in = xv.ptr() + r * n;
    Real* o = out.ptr() + r * n;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (std::isnan(in[c])) {
        throw NumericalError("softmax_rows: NaN at row " + std::to_string(r) + ", column " + std::to_string(c));
      }
      mx = std::max(mx, in[c]);
    }
    Real denom = 0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      denom += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= denom;
  }
  Var vars[] = {x};
  return x.tape().record(std::move(out), vars, [ix = x.id(), m, n](Tape& t, const Tensor& y, Grad g) {
    auto dst = t.grad(ix);
    for (std::size_t r = 0; r < m; ++r) {
      const Real* p = y.ptr() + r * n;
      const Real* gr = g.data() + r * n;
      Real dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += gr[c] * p[c];
      for (std::size_t c = 0; c < n; ++c) dst[r * n + c] += p[c] * (gr[c] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias) {
  require_same_tape(x, gain, "layer_norm");
  require_same_tape(x, bias, "layer_norm");
  const auto& xv = x.value();
  const std::size_t d = xv.shape().back();
  const std::size_t m = xv.size() / d;
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                         shape_to_string(bias.shape()) + " do not match feature size of " +
                         shape_to_string(xv.shape()));
  }
  const Real* gp = gain.value().ptr();
  const Real* bp = bias.value().ptr();
  Tensor out(xv.shape());
  std::vector<Real> xhat(xv.size());
  std::vector<Real> rstd(m);
  for (std::size_t r = 0; r < m; ++r) {
    const Real* in = xv.ptr() + r * d;
    Real mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<Real>(d);
    rstd[r] = Real(1) / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t c = 0; c < d; ++c) {
      const Real h = (in[c] - mean) * rstd[r];
      xhat[r * d + c] = h;
      out[r * d + c] = h * gp[c] + bp[c];
    }
  }
  Var vars[] = {x, gain, bias};
  return x.tape().record(
      std::move(out), vars,
      [ix = x.id(), ig = gain.id(), ib = bias.id(), m, d, xhat = std::move(xhat), rstd = std::move(rstd)](
          Tape& t, const Tensor&, Grad g) {
        if (t.requires_grad(ig)) {
          auto dg = t.grad(ig);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < d; ++c) dg[c] += g[r * d + c] * xhat[r * d + c];
        }
        if (t.requires_grad(ib)) {
          auto db = t.grad(ib);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < d; ++c) db[c] += g[r * d + c];
        }
        if (t.requires_grad(ix)) {
          const Real* gp = t.value(ig).ptr();
          auto dx = t.grad(ix);
          const Real inv_d = Real(1) / static_cast<Real>(d);
          for (std::size_t r = 0; r < m; ++r) {
            Real mean_dh = 0, mean_dh_h = 0;
            for (std::size_t c = 0; c < d; ++c) {
              const Real dh = g[r * d + c] * gp[c];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + c];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t c = 0; c < d; ++c) {
              const Real dh = g[r * d + c] * gp[c];
              dx[r * d + c] += rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
            }
          }
        }
      });
}

Var gelu(Var x) {
  const auto& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
  Var vars[] = {x};
  return x.tape().record(std::move(out), vars, [ix = x.id()](Tape& t, const Tensor&, Grad g) {
    const auto& in = t.value(ix);
    auto dst = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * gelu_derivative(in[i]);
  });
}

Var embedding(Var table, std::span<const TokenId> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                       " is outside [0, " + std::to_string(vocab) + ")");
    }
  }
  Tensor out({ids.size(), d});
  const Real* src = table.value().ptr();
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(src + ids[i] * d, d, out.ptr() + i * d);
  Var vars[] = {table};
  return table.tape().record(std::move(out), vars,
                             [it = table.id(), d, ids = std::vector<TokenId>(ids.begin(), ids.end())](
                                 Tape& t, const Tensor&, Grad g) {
                               auto dst = t.grad(it);
                               for (std::size_t i = 0; i < ids.size(); ++i) {
                                 Real* row = dst.data() + ids[i] * d;
                                 for (std::size_t c = 0; c < d; ++c) row[c] += g[i * d + c];
                               }
                             });
}

Var cross_entropy(Var logits, std::span<const TokenId> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_to_string(logits.shape()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " at position " + std::to_string(i) +
                       " is outside [0, " + std::to_string(vocab) + ")");
    }
  }
  const auto& lv = logits.value();
  std::vector<Real> probs(lv.size());
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const Real* in = lv.ptr() + r * vocab;
    Real* p = probs.data() + r * vocab;
    const Real mx = *std::max_element(in, in + vocab);
    Real denom = 0;
    for (std::size_t c = 0; c < vocab; ++c) {
      p[c] = std::exp(in[c] - mx);
      denom += p[c];
    }
    for (std::size_t c = 0; c < vocab; ++c) p[c] /= denom;
    total += static_cast<double>(std::log(denom) + mx - in[targets[r]]);
  }
  const Real loss = static_cast<Real>(total / static_cast<double>(n));
  Var vars[] = {logits};
  return logits.tape().record(
      Tensor({1}, loss), vars,
      [il = logits.id(), n, vocab, probs = std::move(probs),
       tg = std::vector<TokenId>(targets.begin(), targets.end())](Tape& t, const Tensor&, Grad g) {
        auto dst = t.grad(il);
        const Real s = g[0] / static_cast<Real>(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < vocab; ++c) dst[r * vocab + c] += s * probs[r * vocab + c];
          dst[r * vocab + tg[r]] -= s;
        }
      });
}

Var gather_cols(Var w, std::span<const std::size_t> cols) {
  require_matrix(w, "gather_cols");
  const std::size_t m = w.shape()[0], n = w.shape()[1];
  if (cols.empty()) throw DimensionError("gather_cols: empty column set");
  for (std::size_t c : cols) {
    if (c >= n) throw IndexError("gather_cols: column " + std::to_string(c) + " outside " + shape_to_string(w.shape()));
  }
  const std::size_t k = cols.size();
  Tensor out({m, k});
  const Real* src = w.value().ptr();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = src[r * n + cols[j]];
  Var vars[] = {w};
  return w.tape().record(std::move(out), vars,
                         [iw = w.id(), m, n, k, cols = std::vector<std::size_t>(cols.begin(), cols.end())](
                             Tape& t, const Tensor&, Grad g) {
                           auto dst = t.grad(iw);
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t j = 0; j < k; ++j) dst[r * n + cols[j]] += g[r * k + j];
                         });
}

Var gather_rows(Var w, std::span<const std::size_t> rows) {
  require_matrix(w, "gather_rows");
  const std::size_t m = w.shape()[0], n = w.shape()[1];
  if (rows.empty()) throw DimensionError("gather_rows: empty row set");
  for (std::size_t r : rows) {
    if (r >= m) throw IndexError("gather_rows: row " + std::to_string(r) + " outside " + shape_to_string(w.shape()));
  }
  Tensor out({rows.size(), n});
  const Real* src = w.value().ptr();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(src + rows[i] * n, n, out.ptr() + i * n);
  Var vars[] = {w};
  return w.tape().record(std::move(out), vars,
                         [iw = w.id(), n, rows = std::vector<std::size_t>(rows.begin(), rows.end())](
                             Tape& t, const Tensor&, Grad g) {
                           auto dst = t.grad(iw);
                           for (std::size_t i = 0; i < rows.size(); ++i) {
                             Real* row = dst.data() + rows[i] * n;
                             for (std::size_t c = 0; c < n; ++c) row[c] += g[i * n + c];
                           }
                         });
}

Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq_len, std::size_t heads,
                     std::size_t head_dim) {
  require_same_tape(q, k, "causal_attention");
  require_same_tape(q, v, "causal_attention");
  const Shape expected{batch * seq_len, heads * head_dim};
  for (Var x : {q, k, v}) {
    if (x.shape() != expected) {
      throw DimensionError("causal_attention: operand " + shape_to_string(x.shape()) + " expected " +
                           shape_to_string(expected));
    }
  }
  const std::size_t width = heads * head_dim;
  const std::size_t tt = seq_len * seq_len;
  const Real scale_factor = Real(1) / std::sqrt(static_cast<Real>(head_dim));
  // probs[(b * heads + h) * T*T + i*T + j]
  std::vector<Real> probs(batch * heads * tt, Real(0));
  Tensor out(expected);
  const Real* qp = q.value().ptr();
  const Real* kp = k.value().ptr();
  const Real* vp = v.value().ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * seq_len * width + h * head_dim;
      Real* p = probs.data() + (b * heads + h) * tt;
      gemm(Trans::kNo, Trans::kYes, seq_len, seq_len, head_dim, scale_factor, qp + off, width, kp + off, width, 0, p,
           seq_len);
      for (std::size_t i = 0; i < seq_len; ++i) {
        Real* row = p + i * seq_len;
        Real mx = row[0];
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        if (std::isnan(mx)) throw NumericalError("causal_attention: NaN attention score");
        Real denom = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          denom += row[j];
        }
        for (std::size_t j = 0; j <= i; ++j) row[j] /= denom;
        for (std::size_t j = i + 1; j < seq_len; ++j) row[j] = 0;
      }
      gemm(Trans::kNo, Trans::kNo, seq_len, head_dim, seq_len, 1, p, seq_len, vp + off, width, 0, out.ptr() + off,
           width);
    }
  }
  Var vars[] = {q, k, v};
  return q.tape().record(
      std::move(out), vars,
      [iq = q.id(), ik = k.id(), iv = v.id(), batch, seq_len, heads, head_dim, width, tt, scale_factor,
       probs = std::move(probs)](Tape& t, const Tensor&, Grad g) {
        const Real* qp = t.value(iq).ptr();
        const Real* kp = t.value(ik).ptr();
        const Real* vp = t.value(iv).ptr();
        Real* dq = t.requires_grad(iq) ? t.grad(iq).data() : nullptr;
        Real* dk = t.requires_grad(ik) ? t.grad(ik).data() : nullptr;
        Real* dv = t.requires_grad(iv) ? t.grad(iv).data() : nullptr;
        std::vector<Real> ds(tt);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * seq_len * width + h * head_dim;
            const Real* p = probs.data() + (b * heads + h) * tt;
            const Real* go = g.data() + off;
            if (dv) gemm(Trans::kYes, Trans::kNo, seq_len, head_dim, seq_len, 1, p, seq_len, go, width, 1, dv + off, width);
            if (!dq && !dk) continue;
            // dP = dO . V^T, then dS = P * (dP - rowsum(dP * P))
            gemm(Trans::kNo, Trans::kYes, seq_len, seq_len, head_dim, 1, go, width, vp + off, width, 0, ds.data(),
                 seq_len);
            for (std::size_t i = 0; i < seq_len; ++i) {
              Real* row = ds.data() + i * seq_len;
              const Real* prow = p + i * seq_len;
              Real dot = 0;
              for (std::size_t j = 0; j <= i; ++j) dot += row[j] * prow[j];
              for (std::size_t j = 0; j <= i; ++j) row[j] = prow[j] * (row[j] - dot);
              for (std::size_t j = i + 1; j < seq_len; ++j) row[j] = 0;
            }
            if (dq) {
              gemm(Trans::kNo, Trans::kNo, seq_len, head_dim, seq_len, scale_factor, ds.data(), seq_len, kp + off,
                   width, 1, dq + off, width);
            }
            if (dk) {
              gemm(Trans::kYes, Trans::kNo, seq_len, head_dim, seq_len, scale_factor, ds.data(), seq_len, qp + off,
                   width, 1, dk + off, width);
            }
          }
        }
      });
}

EST_NAMESPACE_END
