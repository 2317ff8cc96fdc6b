// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "est/ops.hpp"
#include "est/rates.hpp"
#include "est/tape.hpp"

EST_NAMESPACE_BEGIN

// Static architecture hyperparameters of the decoder.
struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t head_dim = 32;
  std::size_t hidden = 128;
  std::size_t mlp_inner = 512;
  std::size_t vocab = 256;
  std::size_t seq_len = 64;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
  std::size_t attention_width() const { return n_heads * head_dim; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Parameters of one decoder layer. Attention projections keep every head in a
// contiguous column block (query/key/value) or row block (output), so any head
// subset is gathered without touching the others. The MLP matrices are both
// d x N_M; intermediate column j lives in column j of each.
struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_query, w_key, w_value;  // [d x N_H*d_k]
  Tensor w_out;                    // [N_H*d_k x d]
  Tensor ln2_gain, ln2_bias;
  Tensor w_in;    // [d x N_M]
  Tensor w_proj;  // [d x N_M], applied transposed
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
  bool weight_decay;
};

struct ModelParams {
  ModelConfig config;
  Tensor token_embedding;     // [V x d], tied with the output projection
  Tensor position_embedding;  // [N x d]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;

  // Normal(0, 0.02) weights, residual projections further scaled by
  // 1/sqrt(2 N_L), LayerNorm gain 1 and bias 0.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  // Every parameter in declaration order; this order defines params.bin.
  std::vector<NamedParam> named();
  std::vector<const Tensor*> tensors() const;
  std::size_t parameter_count() const;

  void zero_grad();
  // Flat copies in declaration order.
  std::vector<double> flatten() const;
  std::vector<double> flatten_grad() const;
  void assign(std::span<const double> flat);
};

// Index sets of one layer that participates in a step.
struct LayerSelection {
  std::vector<std::size_t> heads;     // sorted subset of [0, N_H)
  std::vector<std::size_t> mlp_cols;  // sorted subset of [0, N_M)
  friend bool operator==(const LayerSelection&, const LayerSelection&) = default;
};

// One step's sampled subnetwork. Indices are 0-based.
struct SubnetworkMask {
  std::vector<std::size_t> layers;         // sorted subset of [0, N_L)
  std::vector<LayerSelection> selections;  // parallel to `layers`
  Rates rates;

  static SubnetworkMask full(const ModelConfig& config);
  // Throws MaskError on empty, unsorted, duplicated or out-of-range sets.
  void validate(const ModelConfig& config) const;
  // nullptr when the layer is skipped.
  const LayerSelection* selection_for(std::size_t layer) const;
  friend bool operator==(const SubnetworkMask&, const SubnetworkMask&) = default;
};

// Batch geometry of the flattened [batch*seq_len x d] activations.
struct SequenceLayout {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t tokens() const { return batch * seq_len; }
};

// Multi-head attention restricted to `heads`, scaled by N_H/|heads| so the
// expectation over uniform head subsets equals the full module.
Var mha_forward(ModelParams& params, Var x, std::size_t layer, std::span<const std::size_t> heads,
                SequenceLayout layout);

// MLP restricted to intermediate columns `cols`, scaled by N_M/|cols|.
Var mlp_forward(ModelParams& params, Var x, std::size_t layer, std::span<const std::size_t> cols);

// Pre-LayerNorm residual block; identity when the layer is not in the mask.
Var layer_forward(ModelParams& params, Var x, std::size_t layer, const SubnetworkMask& mask, SequenceLayout layout);

// Logits [batch*seq_len x V] for `tokens` laid out row-major as [batch x seq_len].
Var model_forward(Tape& tape, ModelParams& params, std::span<const TokenId> tokens, SequenceLayout layout,
                  const SubnetworkMask& mask);

// Mean next-token cross-entropy of the masked model.
Var model_loss(Tape& tape, ModelParams& params, std::span<const TokenId> tokens, std::span<const TokenId> targets,
               SequenceLayout layout, const SubnetworkMask& mask);

EST_NAMESPACE_END
