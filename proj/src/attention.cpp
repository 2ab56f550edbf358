// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/attention.hpp"

#include <cmath>
#include <map>

namespace babn {
namespace {

Tensor normal_param(Shape shape, double std, RngStream& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = std * rng.normal();
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor const_param(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

}  // namespace

void AttentionConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || ffn_hidden == 0 || vocab_size == 0 ||
      max_seq_len == 0 || n_classes == 0) {
    throw ParameterError("attention config: all sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ParameterError("attention config: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::vector<std::pair<std::string, Shape>> BaseParams::layout(const AttentionConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.ffn_hidden;
  std::vector<std::pair<std::string, Shape>> out = {
      {"embed.token", {cfg.vocab_size, d}},
      {"embed.pos", {cfg.max_seq_len, d}},
  };
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    for (const char* m : {"q", "k", "v", "o"}) {
      out.push_back({p + "attn.w" + m, {d, d}});
      out.push_back({p + "attn.b" + m, {d}});
    }
    out.push_back({p + "ln1.gain", {d}});
    out.push_back({p + "ln1.bias", {d}});
    out.push_back({p + "ffn.w1", {d, f}});
    out.push_back({p + "ffn.b1", {f}});
    out.push_back({p + "ffn.w2", {f, d}});
    out.push_back({p + "ffn.b2", {d}});
    out.push_back({p + "ln2.gain", {d}});
    out.push_back({p + "ln2.bias", {d}});
  }
  out.push_back({"head.w", {d, cfg.n_classes}});
  out.push_back({"head.b", {cfg.n_classes}});
  return out;
}

NamedTensors BaseParams::named() const {
  NamedTensors out = {{"embed.token", token_embed}, {"embed.pos", pos_embed}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = layer_prefix(l);
    const LayerParams& L = layers[l];
    out.insert(out.end(), {{p + "attn.wq", L.wq},
                           {p + "attn.bq", L.bq},
                           {p + "attn.wk", L.wk},
                           {p + "attn.bk", L.bk},
                           {p + "attn.wv", L.wv},
                           {p + "attn.bv", L.bv},
                           {p + "attn.wo", L.wo},
                           {p + "attn.bo", L.bo},
                           {p + "ln1.gain", L.ln1_gain},
                           {p + "ln1.bias", L.ln1_bias},
                           {p + "ffn.w1", L.ffn_w1},
                           {p + "ffn.b1", L.ffn_b1},
                           {p + "ffn.w2", L.ffn_w2},
                           {p + "ffn.b2", L.ffn_b2},
                           {p + "ln2.gain", L.ln2_gain},
                           {p + "ln2.bias", L.ln2_bias}});
  }
  out.push_back({"head.w", head_w});
  out.push_back({"head.b", head_b});
  return out;
}

BaseParams BaseParams::init(const AttentionConfig& cfg, RngStream& rng) {
  cfg.validate();
  NamedTensors t;
  for (const auto& [name, shape] : layout(cfg)) {
    Tensor v;
    const bool is_bias = name.find(".b") != std::string::npos && shape.size() == 1;
    if (name.rfind("embed.", 0) == 0) {
      v = normal_param(shape, 1.0, rng);
    } else if (name.find(".gain") != std::string::npos) {
      v = const_param(shape, 1.0);
    } else if (is_bias || name.find(".bias") != std::string::npos) {
      v = const_param(shape, 0.0);
    } else {
      v = normal_param(shape, 1.0 / std::sqrt(static_cast<double>(shape[0])), rng);
    }
    t.push_back({name, v});
  }
  return bind(cfg, t);
}

BaseParams BaseParams::bind(const AttentionConfig& cfg, const NamedTensors& tensors) {
  std::map<std::string, Tensor> by_name(tensors.begin(), tensors.end());
  std::string missing;
  auto get = [&](const std::string& name, const Shape& shape) -> Tensor {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      missing += " " + name;
      return Tensor::zeros(shape);
    }
    if (it->second.shape() != shape) {
      throw ConversionError("tensor " + name + " has shape " + shape_str(it->second.shape()) +
                            ", expected " + shape_str(shape));
    }
    return it->second;
  };
  const auto lay = layout(cfg);
  std::map<std::string, Shape> shapes(lay.begin(), lay.end());
  BaseParams p;
  p.token_embed = get("embed.token", shapes["embed.token"]);
  p.pos_embed = get("embed.pos", shapes["embed.pos"]);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    auto g = [&](const std::string& n) { return get(pre + n, shapes[pre + n]); };
    LayerParams L;
    L.wq = g("attn.wq");
    L.bq = g("attn.bq");
    L.wk = g("attn.wk");
    L.bk = g("attn.bk");
    L.wv = g("attn.wv");
    L.bv = g("attn.bv");
    L.wo = g("attn.wo");
    L.bo = g("attn.bo");
    L.ln1_gain = g("ln1.gain");
    L.ln1_bias = g("ln1.bias");
    L.ffn_w1 = g("ffn.w1");
    L.ffn_b1 = g("ffn.b1");
    L.ffn_w2 = g("ffn.w2");
    L.ffn_b2 = g("ffn.b2");
    L.ln2_gain = g("ln2.gain");
    L.ln2_bias = g("ln2.bias");
    p.layers.push_back(L);
  }
  p.head_w = get("head.w", shapes["head.w"]);
  p.head_b = get("head.b", shapes["head.b"]);
  if (!missing.empty()) throw ConversionError("missing tensors:" + missing);
  return p;
}

Tensor f_dot(const Tensor& q, const Tensor& k, std::size_t d_k) {
  if (q.rank() < 2 || k.rank() != q.rank() || q.dim(-1) != k.dim(-1)) {
    throw DimensionError("f_dot: query " + shape_str(q.shape()) + " vs key " +
                         shape_str(k.shape()));
  }
  const double dk = static_cast<double>(d_k == 0 ? q.dim(-1) : d_k);
  Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(dk));
  return clamp(logits, -kLogitClamp, kLogitClamp);
}

Tensor f_norm(const Tensor& s) {
  const Tensor row_sum = sum(s, -1);
  for (double v : row_sum.values()) {
    if (!(v >= 1e-300)) throw NumericalError("f_norm: degenerate row with sum " + std::to_string(v));
  }
  Shape keep = s.shape();
  keep.back() = 1;
  return div(s, reshape(row_sum, keep));
}

HeadProjections project_heads(const Tensor& x, const LayerParams& layer,
                              const AttentionConfig& cfg) {
  if (x.rank() != 3 || x.dim(-1) != cfg.d_model) {
    throw DimensionError("attention input must be [B x T x " + std::to_string(cfg.d_model) +
                         "], got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), t = x.dim(1), h = cfg.n_heads, dk = cfg.d_k();
  auto split = [&](const Tensor& w, const Tensor& bias) {
    return permute(reshape(linear(x, w, bias), {b, t, h, dk}), {0, 2, 1, 3});
  };
  return {split(layer.wq, layer.bq), split(layer.wk, layer.bk), split(layer.wv, layer.bv)};
}

Tensor merge_heads(const Tensor& heads) {
  const std::size_t b = heads.dim(0), h = heads.dim(1), t = heads.dim(2), dk = heads.dim(3);
  return reshape(permute(heads, {0, 2, 1, 3}), {b, t, h * dk});
}

Tensor block_output(const Tensor& x, const Tensor& context, const LayerParams& layer) {
  const Tensor attn = linear(context, layer.wo, layer.bo);
  const Tensor h1 = layer_norm(add(x, attn), layer.ln1_gain, layer.ln1_bias);
  const Tensor ff = linear(relu(linear(h1, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2);
  return layer_norm(add(h1, ff), layer.ln2_gain, layer.ln2_bias);
}

Tensor deterministic_attention(const Tensor& x, const LayerParams& layer,
                               const AttentionConfig& cfg, Tensor* weights_out) {
  const bool unbatched = x.rank() == 2;
  const Tensor xb = unbatched ? reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  const HeadProjections p = project_heads(xb, layer, cfg);
  const Tensor w = softmax(f_dot(p.q, p.k), -1);
  if (weights_out) *weights_out = w;
  const Tensor out = block_output(xb, merge_heads(matmul(w, p.v)), layer);
  return unbatched ? reshape(out, x.shape()) : out;
}

Tensor embed(const BaseParams& p, std::span<const int> tokens, std::size_t batch,
             std::size_t seq_len) {
  if (tokens.size() != batch * seq_len) {
    throw DimensionError("embed: " + std::to_string(tokens.size()) + " tokens for batch " +
                         std::to_string(batch) + " x " + std::to_string(seq_len));
  }
  const std::size_t d = p.token_embed.dim(1);
  if (seq_len > p.pos_embed.dim(0)) {
    throw InputError("sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                     std::to_string(p.pos_embed.dim(0)));
  }
  const Tensor tok = reshape(embedding(p.token_embed, tokens), {batch, seq_len, d});
  const Tensor pos =
      seq_len == p.pos_embed.dim(0) ? p.pos_embed : slice(p.pos_embed, 0, 0, seq_len);
  return add(tok, pos);
}

Tensor classifier_head(const BaseParams& p, const Tensor& features, const AttentionConfig& cfg) {
  const std::size_t b = features.dim(0), t = features.dim(1), d = features.dim(2);
  if (cfg.output == OutputKind::kTagging) {
    return linear(reshape(features, {b * t, d}), p.head_w, p.head_b);
  }
  Tensor pooled = cfg.pooling == Pooling::kMean ? mean(features, 1)
                                                : reshape(slice(features, 1, t - 1, 1), {b, d});
  return linear(pooled, p.head_w, p.head_b);
}

}  // namespace babn
