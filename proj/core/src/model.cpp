// SPDX-License-Identifier: Apache-2.0
#include "est/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "est/errors.hpp"
#include "est/random.hpp"

EST_NAMESPACE_BEGIN

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(head_dim, "head_dim");
  positive(hidden, "hidden");
  positive(mlp_inner, "mlp_inner");
  positive(vocab, "vocab");
  if (seq_len < 2) throw ConfigError("model.seq_len must be >= 2");
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  for (Real& x : t.data()) x = static_cast<Real>(stddev * standard_normal(rng));
  return t;
}

constexpr double kInitStd = 0.02;

}  // namespace

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto rng = keyed_rng(seed, /*stream=*/0x1417, 0);
  const std::size_t d = config.hidden, w = config.attention_width(), m = config.mlp_inner;
  const double residual_std = kInitStd / std::sqrt(2.0 * static_cast<double>(config.n_layers));

  ModelParams p;
  p.config = config;
  p.token_embedding = normal_tensor({config.vocab, d}, kInitStd, rng);
  p.position_embedding = normal_tensor({config.seq_len, d}, kInitStd, rng);
  p.layers.reserve(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerParams lp;
    lp.ln1_gain = Tensor({d}, Real(1));
    lp.ln1_bias = Tensor({d}, Real(0));
    lp.w_query = normal_tensor({d, w}, kInitStd, rng);
    lp.w_key = normal_tensor({d, w}, kInitStd, rng);
    lp.w_value = normal_tensor({d, w}, kInitStd, rng);
    lp.w_out = normal_tensor({w, d}, residual_std, rng);
    lp.ln2_gain = Tensor({d}, Real(1));
    lp.ln2_bias = Tensor({d}, Real(0));
    lp.w_in = normal_tensor({d, m}, kInitStd, rng);
    lp.w_proj = normal_tensor({d, m}, residual_std, rng);
    p.layers.push_back(std::move(lp));
  }
  p.final_gain = Tensor({d}, Real(1));
  p.final_bias = Tensor({d}, Real(0));
  return p;
}

std::vector<NamedParam> ModelParams::named() {
  std::vector<NamedParam> out;
  out.push_back({"token_embedding", &token_embedding, false});
  out.push_back({"position_embedding", &position_embedding, false});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& lp = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.push_back({pre + "ln1_gain", &lp.ln1_gain, false});
    out.push_back({pre + "ln1_bias", &lp.ln1_bias, false});
    out.push_back({pre + "w_query", &lp.w_query, true});
    out.push_back({pre + "w_key", &lp.w_key, true});
    out.push_back({pre + "w_value", &lp.w_value, true});
    out.push_back({pre + "w_out", &lp.w_out, true});
    out.push_back({pre + "ln2_gain", &lp.ln2_gain, false});
    out.push_back({pre + "ln2_bias", &lp.ln2_bias, false});
    out.push_back({pre + "w_in", &lp.w_in, true});
    out.push_back({pre + "w_proj", &lp.w_proj, true});
  }
  out.push_back({"final_gain", &final_gain, false});
  out.push_back({"final_bias", &final_bias, false});
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  std::vector<const Tensor*> out{&token_embedding, &position_embedding};
  for (const auto& lp : layers) {
    for (const Tensor* t : {&lp.ln1_gain, &lp.ln1_bias, &lp.w_query, &lp.w_key, &lp.w_value, &lp.w_out, &lp.ln2_gain,
                            &lp.ln2_bias, &lp.w_in, &lp.w_proj}) {
      out.push_back(t);
    }
  }
  out.push_back(&final_gain);
  out.push_back(&final_bias);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& p : named()) p.tensor->zero_grad();
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Tensor* t : tensors())
    for (Real x : t->data()) out.push_back(static_cast<double>(x));
  return out;
}

std::vector<double> ModelParams::flatten_grad() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Tensor* t : tensors()) {
    if (t->has_grad()) {
      for (Real x : t->grad()) out.push_back(static_cast<double>(x));
    } else {
      out.insert(out.end(), t->size(), 0.0);
    }
  }
  return out;
}

void ModelParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw DimensionError("assign: expected " + std::to_string(parameter_count()) + " values, got " +
                         std::to_string(flat.size()));
  }
  std::size_t i = 0;
  for (auto& p : named())
    for (Real& x : p.tensor->data()) x = static_cast<Real>(flat[i++]);
}

SubnetworkMask SubnetworkMask::full(const ModelConfig& config) {
  SubnetworkMask m;
  LayerSelection sel;
  sel.heads.resize(config.n_heads);
  std::iota(sel.heads.begin(), sel.heads.end(), std::size_t{0});
  sel.mlp_cols.resize(config.mlp_inner);
  std::iota(sel.mlp_cols.begin(), sel.mlp_cols.end(), std::size_t{0});
  m.layers.resize(config.n_layers);
  std::iota(m.layers.begin(), m.layers.end(), std::size_t{0});
  m.selections.assign(config.n_layers, sel);
  return m;
}

namespace {

void check_index_set(std::span<const std::size_t> set, std::size_t n, const std::string& what) {
  if (set.empty()) throw MaskError(what + " is empty");
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i] >= n) throw MaskError(what + " index " + std::to_string(set[i]) + " outside [0, " + std::to_string(n) + ")");
    if (i > 0 && set[i] <= set[i - 1]) throw MaskError(what + " must be sorted and duplicate-free");
  }
}

}  // namespace

void SubnetworkMask::validate(const ModelConfig& config) const {
  check_index_set(layers, config.n_layers, "layer set");
  if (selections.size() != layers.size()) throw MaskError("one selection per sampled layer required");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "layer " + std::to_string(layers[i]);
    check_index_set(selections[i].heads, config.n_heads, where + " head set");
    check_index_set(selections[i].mlp_cols, config.mlp_inner, where + " mlp column set");
  }
}

const LayerSelection* SubnetworkMask::selection_for(std::size_t layer) const {
  auto it = std::lower_bound(layers.begin(), layers.end(), layer);
  if (it == layers.end() || *it != layer) return nullptr;
  return &selections[static_cast<std::size_t>(it - layers.begin())];
}

namespace {

std::vector<std::size_t> head_columns(std::span<const std::size_t> heads, std::size_t head_dim) {
  std::vector<std::size_t> cols;
  cols.reserve(heads.size() * head_dim);
  for (std::size_t h : heads)
    for (std::size_t c = 0; c < head_dim; ++c) cols.push_back(h * head_dim + c);
  return cols;
}

// Divides by the sampled fraction |I|/n.
Var rescale(Var x, std::size_t sampled, std::size_t total) {
  if (sampled == total) return x;
  return scale(x, static_cast<Real>(static_cast<double>(total) / static_cast<double>(sampled)));
}

}  // namespace

Var mha_forward(ModelParams& params, Var x, std::size_t layer, std::span<const std::size_t> heads,
                SequenceLayout layout) {
  const auto& cfg = params.config;
  if (layer >= cfg.n_layers) throw IndexError("mha_forward: layer " + std::to_string(layer) + " out of range");
  check_index_set(heads, cfg.n_heads, "mha_forward: head set");
  if (x.shape() != Shape{layout.tokens(), cfg.hidden}) {
    throw DimensionError("mha_forward: input " + shape_to_string(x.shape()) + " does not match layout");
  }
  Tape& tape = x.tape();
  auto& lp = params.layers[layer];
  Var wq = tape.parameter(lp.w_query);
  Var wk = tape.parameter(lp.w_key);
  Var wv = tape.parameter(lp.w_value);
  Var wo = tape.parameter(lp.w_out);
  if (heads.size() != cfg.n_heads) {
    const auto cols = head_columns(heads, cfg.head_dim);
    wq = gather_cols(wq, cols);
    wk = gather_cols(wk, cols);
    wv = gather_cols(wv, cols);
    wo = gather_rows(wo, cols);
  }
  Var q = matmul(x, wq);
  Var k = matmul(x, wk);
  Var v = matmul(x, wv);
  Var attn = causal_attention(q, k, v, layout.batch, layout.seq_len, heads.size(), cfg.head_dim);
  return rescale(matmul(attn, wo), heads.size(), cfg.n_heads);
}

Var mlp_forward(ModelParams& params, Var x, std::size_t layer, std::span<const std::size_t> cols) {
  const auto& cfg = params.config;
  if (layer >= cfg.n_layers) throw IndexError("mlp_forward: layer " + std::to_string(layer) + " out of range");
  check_index_set(cols, cfg.mlp_inner, "mlp_forward: column set");
  if (x.shape().size() != 2 || x.shape()[1] != cfg.hidden) {
    throw DimensionError("mlp_forward: input " + shape_to_string(x.shape()) + " is not [tokens x hidden]");
  }
  Tape& tape = x.tape();
  auto& lp = params.layers[layer];
  Var w1 = tape.parameter(lp.w_in);
  Var w2 = tape.parameter(lp.w_proj);
  if (cols.size() != cfg.mlp_inner) {
    w1 = gather_cols(w1, cols);
    w2 = gather_cols(w2, cols);
  }
  Var hidden = gelu(matmul(x, w1));
  return rescale(matmul_nt(hidden, w2), cols.size(), cfg.mlp_inner);
}

Var layer_forward(ModelParams& params, Var x, std::size_t layer, const SubnetworkMask& mask, SequenceLayout layout) {
  if (layer >= params.config.n_layers) throw IndexError("layer_forward: layer " + std::to_string(layer) + " out of range");
  const LayerSelection* sel = mask.selection_for(layer);
  if (sel == nullptr) return x;
  Tape& tape = x.tape();
  auto& lp = params.layers[layer];
  Var a = layer_norm(x, tape.parameter(lp.ln1_gain), tape.parameter(lp.ln1_bias));
  Var h = add(x, mha_forward(params, a, layer, sel->heads, layout));
  Var b = layer_norm(h, tape.parameter(lp.ln2_gain), tape.parameter(lp.ln2_bias));
  return add(h, mlp_forward(params, b, layer, sel->mlp_cols));
}

Var model_forward(Tape& tape, ModelParams& params, std::span<const TokenId> tokens, SequenceLayout layout,
                  const SubnetworkMask& mask) {
  const auto& cfg = params.config;
  if (layout.seq_len > cfg.seq_len) {
    throw RangeError("model_forward: sequence length " + std::to_string(layout.seq_len) + " exceeds model.seq_len " +
                     std::to_string(cfg.seq_len));
  }
  if (tokens.size() != layout.tokens()) {
    throw DimensionError("model_forward: " + std::to_string(tokens.size()) + " tokens for layout " +
                         std::to_string(layout.batch) + "x" + std::to_string(layout.seq_len));
  }
  mask.validate(cfg);
  std::vector<TokenId> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<TokenId>(i % layout.seq_len);

  Var wte = tape.parameter(params.token_embedding);
  Var x = add(embedding(wte, tokens), embedding(tape.parameter(params.position_embedding), positions));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) x = layer_forward(params, x, l, mask, layout);
  Var y = layer_norm(x, tape.parameter(params.final_gain), tape.parameter(params.final_bias));
  return matmul_nt(y, wte);
}

Var model_loss(Tape& tape, ModelParams& params, std::span<const TokenId> tokens, std::span<const TokenId> targets,
               SequenceLayout layout, const SubnetworkMask& mask) {
  return cross_entropy(model_forward(tape, params, tokens, layout, mask), targets);
}

EST_NAMESPACE_END
