/*
   Copyright 2026 The SGA Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <cstring>
#include <optional>
#include <random>

#include "sga/numerics/ops.hpp"
#include "sga/vocab.hpp"

namespace sga {

/// Shape of the pre-trained bidirectional transformer.
struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t d_model = 128;
  std::size_t num_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 256;
  std::size_t max_positions = 128;

  void validate() const {
    if (num_layers == 0) throw std::invalid_argument("num_layers must be positive");
    if (num_heads == 0 || d_model % num_heads != 0)
      throw std::invalid_argument("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                                  std::to_string(num_heads));
    if (d_ff == 0) throw std::invalid_argument("d_ff must be positive");
    if (vocab_size < 8) throw std::invalid_argument("vocab_size must be at least 8");
    if (max_positions == 0) throw std::invalid_argument("max_positions must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Parameter ln1_g, ln1_b;
  Parameter w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Parameter ln2_g, ln2_b;
  Parameter w_1, b_1, w_2, b_2;

  template <class F>
  void for_each(F&& f) {
    for (Parameter* p : {&ln1_g, &ln1_b, &w_q, &b_q, &w_k, &b_k, &w_v, &b_v, &w_o, &b_o, &ln2_g, &ln2_b, &w_1,
                         &b_1, &w_2, &b_2})
      f(*p);
  }
};

/// Frozen-able backbone weights. The output head is tied to the token embeddings.
struct BackboneParams {
  ModelConfig config;
  Parameter tok_emb;  // [V x d]
  Parameter pos_emb;  // [P x d]
  std::vector<LayerWeights> layers;
  Parameter lnf_g, lnf_b;
  Parameter out_bias;  // [V]
  bool frozen = false;

  template <class F>
  void for_each(F&& f) {
    f(tok_emb);
    f(pos_emb);
    for (auto& l : layers) l.for_each(f);
    f(lnf_g);
    f(lnf_b);
    f(out_bias);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<BackboneParams*>(this)->for_each([&](Parameter& p) { f(static_cast<const Parameter&>(p)); });
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for_each([&](Parameter& p) { out.push_back(&p); });
    return out;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for_each([&](const Parameter& p) { n += p.value.size(); });
    return n;
  }

  /// FNV-1a over every value byte in declaration order.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for_each([&](const Parameter& p) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.ptr());
      for (std::size_t i = 0; i < p.value.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    });
    return h;
  }

  static BackboneParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.d_model, f = cfg.d_ff, V = cfg.vocab_size;
    const double wstd = 1.0 / std::sqrt(static_cast<double>(d));
    const double res_std = wstd / std::sqrt(2.0 * static_cast<double>(cfg.num_layers));
    BackboneParams p;
    p.config = cfg;
    p.tok_emb = {"tok_emb", Tensor::randn({V, d}, 0.1, rng)};
    p.pos_emb = {"pos_emb", Tensor::randn({cfg.max_positions, d}, 0.1, rng)};
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      LayerWeights w;
      w.ln1_g = {pre + "ln1_g", Tensor({d}, 1.0)};
      w.ln1_b = {pre + "ln1_b", Tensor({d})};
      w.w_q = {pre + "w_q", Tensor::randn({d, d}, wstd, rng)};
      w.b_q = {pre + "b_q", Tensor({d})};
      w.w_k = {pre + "w_k", Tensor::randn({d, d}, wstd, rng)};
      w.b_k = {pre + "b_k", Tensor({d})};
      w.w_v = {pre + "w_v", Tensor::randn({d, d}, wstd, rng)};
      w.b_v = {pre + "b_v", Tensor({d})};
      w.w_o = {pre + "w_o", Tensor::randn({d, d}, res_std, rng)};
      w.b_o = {pre + "b_o", Tensor({d})};
      w.ln2_g = {pre + "ln2_g", Tensor({d}, 1.0)};
      w.ln2_b = {pre + "ln2_b", Tensor({d})};
      w.w_1 = {pre + "w_1", Tensor::randn({d, f}, wstd, rng)};
      w.b_1 = {pre + "b_1", Tensor({f})};
      w.w_2 = {pre + "w_2", Tensor::randn({f, d}, res_std * std::sqrt(static_cast<double>(d) / f), rng)};
      w.b_2 = {pre + "b_2", Tensor({d})};
      p.layers.push_back(std::move(w));
    }
    p.lnf_g = {"lnf_g", Tensor({d}, 1.0)};
    p.lnf_b = {"lnf_b", Tensor({d})};
    p.out_bias = {"out_bias", Tensor({V})};
    return p;
  }
};

/// Trainable key/value memory prepended to every attention layer.
struct PrefixLayer {
  Parameter key;    // [m x d]
  Parameter value;  // [m x d]
};

struct PrefixKV {
  std::vector<PrefixLayer> layers;

  std::size_t length() const { return layers.empty() ? 0 : layers.front().key.value.rows(); }
  std::size_t num_layers() const { return layers.size(); }

  template <class F>
  void for_each(F&& f) {
    for (auto& l : layers) {
      f(l.key);
      f(l.value);
    }
  }

  static PrefixKV init(const std::string& name, std::size_t num_layers, std::size_t length, std::size_t d_model,
                       double stddev, std::mt19937_64& rng) {
    PrefixKV p;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::string pre = name + ".layer" + std::to_string(l) + ".";
      p.layers.push_back({{pre + "key", Tensor::randn({length, d_model}, stddev, rng)},
                          {pre + "value", Tensor::randn({length, d_model}, stddev, rng)}});
    }
    return p;
  }

  void validate(std::size_t d_model) const {
    const std::size_t m = length();
    for (const auto& l : layers) {
      if (l.key.value.rows() != m || l.value.value.rows() != m)
        throw DimensionError("prefix length differs across layers");
      if ((m > 0 && l.key.value.cols() != d_model) || (m > 0 && l.value.value.cols() != d_model))
        throw DimensionError("prefix width " + std::to_string(l.key.value.cols()) + " does not match d_model " +
                             std::to_string(d_model));
      if (!l.key.value.all_finite() || !l.value.value.all_finite())
        throw std::domain_error("prefix contains non-finite values");
    }
  }
};

/// One layer's prefix as tape values (possibly computed, e.g. projected source states).
struct PrefixVars {
  Var key;
  Var value;
};
using PromptVars = std::vector<PrefixVars>;

inline PromptVars bind_prefix(Tape& tape, PrefixKV& prefix, bool trainable) {
  PromptVars out;
  for (auto& l : prefix.layers) {
    if (trainable) out.push_back({tape.param(l.key), tape.param(l.value)});
    else out.push_back({tape.constant_ref(l.key.value), tape.constant_ref(l.value.value)});
  }
  return out;
}

inline PromptVars bind_prefix(Tape& tape, const PrefixKV& prefix) {
  PromptVars out;
  for (const auto& l : prefix.layers)
    out.push_back({tape.constant_ref(l.key.value), tape.constant_ref(l.value.value)});
  return out;
}

/// Backbone weights bound to a tape. Frozen weights become constants and never
/// receive gradients; unfrozen ones accumulate into Parameter::grad.
class BoundBackbone {
 public:
  struct Layer {
    Var ln1_g, ln1_b, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
  };

  /// Read-only binding: every weight is a constant.
  BoundBackbone(Tape& tape, const BackboneParams& params) : tape_(&tape), config_(params.config) {
    bind_all(const_cast<BackboneParams&>(params), false);
  }
  /// Training binding: weights become trainable leaves unless the backbone is frozen.
  BoundBackbone(Tape& tape, BackboneParams& params, bool trainable) : tape_(&tape), config_(params.config) {
    bind_all(params, trainable && !params.frozen);
  }

  Tape& tape() const { return *tape_; }
  const ModelConfig& config() const { return config_; }

  Var tok_emb, pos_emb, lnf_g, lnf_b, out_bias;
  std::vector<Layer> layers;

 private:
  void bind_all(BackboneParams& params, bool train) {
    Tape& tape = *tape_;
    auto bind = [&](Parameter& p) { return train ? tape.param(p) : tape.constant_ref(p.value); };
    tok_emb = bind(params.tok_emb);
    pos_emb = bind(params.pos_emb);
    for (auto& w : params.layers)
      layers.push_back({bind(w.ln1_g), bind(w.ln1_b), bind(w.w_q), bind(w.b_q), bind(w.w_k), bind(w.b_k),
                        bind(w.w_v), bind(w.b_v), bind(w.w_o), bind(w.b_o), bind(w.ln2_g), bind(w.ln2_b),
                        bind(w.w_1), bind(w.b_1), bind(w.w_2), bind(w.b_2)});
    lnf_g = bind(params.lnf_g);
    lnf_b = bind(params.lnf_b);
    out_bias = bind(params.out_bias);
  }

  Tape* tape_;
  ModelConfig config_;
};

/// Attention sub-layer with optional prefix memory.
///
/// `normed` is the layer-normalised hidden state [T x d]. Queries come from
/// `normed` only; keys and values are [prefix ; projection of normed]. An absent
/// or zero-length prefix reduces to plain bidirectional self-attention.
inline Var attend_with_prefix(const BoundBackbone::Layer& w, Var normed, const PrefixVars* prefix,
                              std::size_t heads, const std::vector<bool>* key_mask = nullptr,
                              Tensor* weights_out = nullptr) {
  const std::size_t d = normed.cols();
  Var q = add_bias(matmul(normed, w.w_q), w.b_q);
  Var k = add_bias(matmul(normed, w.w_k), w.b_k);
  Var v = add_bias(matmul(normed, w.w_v), w.b_v);
  std::vector<bool> full_mask;
  if (prefix && prefix->key.rows() > 0) {
    if (prefix->key.cols() != d || prefix->value.cols() != d || prefix->value.rows() != prefix->key.rows())
      throw DimensionError("prefix key " + shape_str(prefix->key.shape()) + " / value " +
                           shape_str(prefix->value.shape()) + " incompatible with d_model " + std::to_string(d));
    if (key_mask) {
      full_mask.assign(prefix->key.rows(), true);
      full_mask.insert(full_mask.end(), key_mask->begin(), key_mask->end());
      key_mask = &full_mask;
    }
    k = concat_rows(prefix->key, k);
    v = concat_rows(prefix->value, v);
  }
  Var o = attention(q, k, v, heads, key_mask, weights_out);
  return add_bias(matmul(o, w.w_o), w.b_o);
}

/// Layer-wise hidden states (the residual stream after each block) and MLM logits.
struct LayerStatesVar {
  std::vector<Var> hidden;
  Var logits;
};

/// The LM forward pass f_LM(prompt, tokens) on a tape.
inline LayerStatesVar forward_lm(const BoundBackbone& bb, const PromptVars* prompt, std::span<const TokenId> tokens,
                                 const std::vector<bool>* key_mask = nullptr) {
  const ModelConfig& cfg = bb.config();
  if (tokens.size() > cfg.max_positions)
    throw LengthError("sequence length " + std::to_string(tokens.size()) + " exceeds max_positions " +
                      std::to_string(cfg.max_positions));
  if (prompt && !prompt->empty() && prompt->size() != cfg.num_layers)
    throw DimensionError("prompt has " + std::to_string(prompt->size()) + " layers, model has " +
                         std::to_string(cfg.num_layers));
  if (tokens.empty()) throw EmptyInputError("forward_lm on an empty sequence");
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = add(embed_lookup(bb.tok_emb, tokens), embed_lookup(bb.pos_emb, positions));
  LayerStatesVar out;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto& w = bb.layers[l];
    const PrefixVars* pre = (prompt && !prompt->empty()) ? &(*prompt)[l] : nullptr;
    Var a = attend_with_prefix(w, layer_norm(x, w.ln1_g, w.ln1_b), pre, cfg.num_heads, key_mask);
    x = add(x, a);
    Var h = gelu(add_bias(matmul(layer_norm(x, w.ln2_g, w.ln2_b), w.w_1), w.b_1));
    x = add(x, add_bias(matmul(h, w.w_2), w.b_2));
    out.hidden.push_back(x);
  }
  out.logits = add_bias(matmul_nt(layer_norm(x, bb.lnf_g, bb.lnf_b), bb.tok_emb), bb.out_bias);
  return out;
}

/// Plain-tensor layer states.
struct LayerStates {
  std::vector<Tensor> hidden;
  Tensor logits;
};

/// Read-only forward pass; safe to call concurrently on shared parameters.
inline LayerStates forward_lm(const BackboneParams& params, const PrefixKV* prompt, std::span<const TokenId> tokens) {
  Tape tape;
  BoundBackbone bb(tape, params);
  PromptVars pv;
  if (prompt) {
    prompt->validate(params.config.d_model);
    if (prompt->length() > 0) pv = bind_prefix(tape, *prompt);
  }
  LayerStatesVar s = forward_lm(bb, pv.empty() ? nullptr : &pv, tokens);
  LayerStates out;
  for (Var h : s.hidden) out.hidden.push_back(h.value());
  out.logits = s.logits.value();
  return out;
}

}  // namespace sga
