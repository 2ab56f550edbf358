// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic multi-head scaled dot-product self-attention and the
// post-norm transformer block around it. Activations are laid out as
// [batch, seq, d_model]; per-head tensors as [batch, heads, seq, d_k].

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "babn/data.hpp"
#include "babn/rng.hpp"
#include "babn/tensor.hpp"

namespace babn {

/// Logits are clamped to this range after scaling.
inline constexpr double kLogitClamp = 30.0;

enum class OutputKind { kClassify, kTagging };
enum class Pooling { kMean, kLast };

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ffn_hidden = 128;
  std::size_t vocab_size = 16;
  std::size_t max_seq_len = 10;
  std::size_t n_classes = 16;
  OutputKind output = OutputKind::kTagging;
  Pooling pooling = Pooling::kMean;

  std::size_t d_k() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const AttentionConfig&) const = default;
};

/// Handles into one layer's parameters. M_Q/M_K/M_V hold all heads side by
/// side: head h owns columns [h*d_k, (h+1)*d_k).
struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Parameters shared by the deterministic and Bayesian models.
struct BaseParams {
  Tensor token_embed;  // [vocab x d]
  Tensor pos_embed;    // [max_seq x d]
  std::vector<LayerParams> layers;
  Tensor head_w;  // [d x n_classes]
  Tensor head_b;

  /// Stable, ordered names (used by checkpoints and optimizers).
  NamedTensors named() const;
  static BaseParams init(const AttentionConfig& cfg, RngStream& rng);
  /// Rebinds handles from a name lookup; throws ConversionError on gaps.
  static BaseParams bind(const AttentionConfig& cfg, const NamedTensors& tensors);
  /// Expected name -> shape table for `cfg`.
  static std::vector<std::pair<std::string, Shape>> layout(const AttentionConfig& cfg);
};

/// Phi = Q K^T / sqrt(d_k), clamped to [-kLogitClamp, kLogitClamp].
/// `d_k` of 0 means Q's last extent.
Tensor f_dot(const Tensor& q, const Tensor& k, std::size_t d_k = 0);

/// Row-normalizes positive scores over the key (last) axis.
Tensor f_norm(const Tensor& s);

struct HeadProjections {
  Tensor q, k, v;  // [B, H, T, d_k]
};

HeadProjections project_heads(const Tensor& x, const LayerParams& layer, const AttentionConfig& cfg);
/// [B, H, T, d_k] -> [B, T, H*d_k]
Tensor merge_heads(const Tensor& heads);
/// Output projection, residual + layer norm, FFN, residual + layer norm.
Tensor block_output(const Tensor& x, const Tensor& context, const LayerParams& layer);

/// Full deterministic self-attention block on x [B, T, d] (or [T, d]).
/// When `weights_out` is given, receives the per-head attention weights.
Tensor deterministic_attention(const Tensor& x, const LayerParams& layer, const AttentionConfig& cfg,
                               Tensor* weights_out = nullptr);

/// Token plus learned position embeddings, [B, T, d].
Tensor embed(const BaseParams& p, std::span<const int> tokens, std::size_t batch,
             std::size_t seq_len);

/// [B, T, d] -> logits [B, n_classes] (classify) or [B*T, n_classes] (tagging).
Tensor classifier_head(const BaseParams& p, const Tensor& features, const AttentionConfig& cfg);

}  // namespace babn
