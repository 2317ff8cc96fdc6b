// SPDX-License-Identifier: Apache-2.0
#include "reference_gpt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace est_test {

RefMask ref_full_mask(const RefModel& m) {
  RefMask mask;
  mask.layer_on.assign(m.layers.size(), true);
  mask.head_on.assign(m.layers.size(), std::vector<bool>(m.n_heads, true));
  mask.col_on.assign(m.layers.size(), std::vector<bool>(m.mlp_inner, true));
  return mask;
}

double ref_gelu(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

RefMatrix ref_layer_norm(const RefMatrix& x, const std::vector<double>& g, const std::vector<double>& b) {
  RefMatrix y(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double mean = 0;
    for (std::size_t c = 0; c < x.cols; ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols);
    double var = 0;
    for (std::size_t c = 0; c < x.cols; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) y(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
  return y;
}

RefMatrix ref_attention(const RefModel& m, std::size_t layer, const RefMatrix& x, std::size_t batch,
                        std::size_t seq_len, const std::vector<bool>& heads) {
  const RefLayer& L = m.layers[layer];
  const std::size_t d = m.hidden, dk = m.head_dim;
  const auto enabled = static_cast<double>(std::count(heads.begin(), heads.end(), true));
  RefMatrix out(x.rows, d);
  for (std::size_t h = 0; h < m.n_heads; ++h) {
    if (!heads[h]) continue;
    for (std::size_t b = 0; b < batch; ++b) {
      // per-head projections of this sequence
      std::vector<std::vector<double>> q(seq_len, std::vector<double>(dk)), k = q, v = q;
      for (std::size_t t = 0; t < seq_len; ++t) {
        for (std::size_t j = 0; j < dk; ++j) {
          double sq = 0, sk = 0, sv = 0;
          for (std::size_t i = 0; i < d; ++i) {
            const double xi = x(b * seq_len + t, i);
            sq += xi * L.wq(i, h * dk + j);
            sk += xi * L.wk(i, h * dk + j);
            sv += xi * L.wv(i, h * dk + j);
          }
          q[t][j] = sq;
          k[t][j] = sk;
          v[t][j] = sv;
        }
      }
      for (std::size_t t = 0; t < seq_len; ++t) {
        std::vector<double> w(t + 1);
        double mx = -1e300;
        for (std::size_t s = 0; s <= t; ++s) {
          double dot = 0;
          for (std::size_t j = 0; j < dk; ++j) dot += q[t][j] * k[s][j];
          w[s] = dot / std::sqrt(static_cast<double>(dk));
          mx = std::max(mx, w[s]);
        }
        double z = 0;
        for (double& e : w) z += (e = std::exp(e - mx));
        std::vector<double> ctx(dk, 0.0);
        for (std::size_t s = 0; s <= t; ++s) {
          for (std::size_t j = 0; j < dk; ++j) ctx[j] += w[s] / z * v[s][j];
        }
        for (std::size_t c = 0; c < d; ++c) {
          double acc = 0;
          for (std::size_t j = 0; j < dk; ++j) acc += ctx[j] * L.wo(h * dk + j, c);
          out(b * seq_len + t, c) += acc * static_cast<double>(m.n_heads) / enabled;
        }
      }
    }
  }
  return out;
}

RefMatrix ref_mlp(const RefModel& m, std::size_t layer, const RefMatrix& x, const std::vector<bool>& cols) {
  const RefLayer& L = m.layers[layer];
  const auto enabled = static_cast<double>(std::count(cols.begin(), cols.end(), true));
  RefMatrix out(x.rows, m.hidden);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t j = 0; j < m.mlp_inner; ++j) {
      if (!cols[j]) continue;
      double pre = 0;
      for (std::size_t i = 0; i < m.hidden; ++i) pre += x(r, i) * L.w_in(i, j);
      const double a = ref_gelu(pre);
      for (std::size_t c = 0; c < m.hidden; ++c) {
        out(r, c) += a * L.w_proj(c, j) * static_cast<double>(m.mlp_inner) / enabled;
      }
    }
  }
  return out;
}

RefMatrix ref_logits(const RefModel& m, const std::vector<std::uint32_t>& tokens, std::size_t batch,
                     std::size_t seq_len, const RefMask& mask) {
  const std::size_t d = m.hidden;
  RefMatrix x(tokens.size(), d);
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) x(r, c) = m.wte(tokens[r], c) + m.wpe(r % seq_len, c);
  }
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (!mask.layer_on[l]) continue;
    const RefLayer& L = m.layers[l];
    const RefMatrix attn = ref_attention(m, l, ref_layer_norm(x, L.ln1_gain, L.ln1_bias), batch, seq_len, mask.head_on[l]);
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += attn.v[i];
    const RefMatrix mlp = ref_mlp(m, l, ref_layer_norm(x, L.ln2_gain, L.ln2_bias), mask.col_on[l]);
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += mlp.v[i];
  }
  const RefMatrix y = ref_layer_norm(x, m.final_gain, m.final_bias);
  RefMatrix logits(y.rows, m.wte.rows);
  for (std::size_t r = 0; r < y.rows; ++r) {
    for (std::size_t t = 0; t < m.wte.rows; ++t) {
      double acc = 0;
      for (std::size_t c = 0; c < d; ++c) acc += y(r, c) * m.wte(t, c);
      logits(r, t) = acc;
    }
  }
  return logits;
}

double ref_loss(const RefModel& m, const std::vector<std::uint32_t>& tokens, const std::vector<std::uint32_t>& targets,
                std::size_t batch, std::size_t seq_len, const RefMask& mask) {
  const RefMatrix logits = ref_logits(m, tokens, batch, seq_len, mask);
  double total = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    double mx = -1e300;
    for (std::size_t c = 0; c < logits.cols; ++c) mx = std::max(mx, logits(r, c));
    double z = 0;
    for (std::size_t c = 0; c < logits.cols; ++c) z += std::exp(logits(r, c) - mx);
    total += std::log(z) + mx - logits(r, targets[r]);
  }
  return total / static_cast<double>(logits.rows);
}

}  // namespace est_test
