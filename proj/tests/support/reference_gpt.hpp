// SPDX-License-Identifier: Apache-2.0
// Straightforward double-precision decoder used as an oracle. It shares no
// code with the engine: plain loops, explicit per-head sums, explicit masking.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace est_test {

struct RefMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  RefMatrix() = default;
  RefMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

struct RefLayer {
  std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  RefMatrix wq, wk, wv, wo, w_in, w_proj;
};

struct RefModel {
  std::size_t n_heads = 0, head_dim = 0, hidden = 0, mlp_inner = 0;
  RefMatrix wte, wpe;
  std::vector<RefLayer> layers;
  std::vector<double> final_gain, final_bias;
};

// Which heads / columns / layers take part. Empty `layers` entry = skipped.
struct RefMask {
  std::vector<bool> layer_on;
  std::vector<std::vector<bool>> head_on;  // [layer][head]
  std::vector<std::vector<bool>> col_on;   // [layer][column]
};

RefMask ref_full_mask(const RefModel& m);

double ref_gelu(double x);
RefMatrix ref_layer_norm(const RefMatrix& x, const std::vector<double>& g, const std::vector<double>& b);

// Attention of one layer over [batch*seq x d] input `x` (already normalised),
// summing only enabled heads and scaling by N_H / enabled.
RefMatrix ref_attention(const RefModel& m, std::size_t layer, const RefMatrix& x, std::size_t batch,
                        std::size_t seq_len, const std::vector<bool>& heads);
RefMatrix ref_mlp(const RefModel& m, std::size_t layer, const RefMatrix& x, const std::vector<bool>& cols);

RefMatrix ref_logits(const RefModel& m, const std::vector<std::uint32_t>& tokens, std::size_t batch,
                     std::size_t seq_len, const RefMask& mask);
double ref_loss(const RefModel& m, const std::vector<std::uint32_t>& tokens, const std::vector<std::uint32_t>& targets,
                std::size_t batch, std::size_t seq_len, const RefMask& mask);

}  // namespace est_test
