// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/babn_net.hpp"

#include <cmath>
#include <map>

namespace babn {
namespace {

constexpr double kNewWeightStd = 0.02;
constexpr double kEncoderBiasInit = -3.0;

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

// Restricts an encoder map stacked over heads to the first n keys:
// w [H, n_max, n_max] -> [H, n, n], b [H, n_max] -> [H, 1, n].
Tensor enc_weight(const Tensor& w, std::size_t n) {
  if (w.dim(1) == n) return w;
  return slice(slice(w, 1, 0, n), 2, 0, n);
}

Tensor enc_bias(const Tensor& b, std::size_t n) {
  const std::size_t h = b.dim(0);
  const Tensor cut = b.dim(1) == n ? b : slice(b, 1, 0, n);
  return reshape(cut, {h, 1, n});
}

// Row-wise linear map along the key axis of x [B, H, T, T].
Tensor key_axis_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 4 || x.dim(1) != w.dim(0)) {
    throw DimensionError("encoder input " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  }
  const std::size_t n = x.dim(3);
  if (n > w.dim(1)) {
    throw InputError("sequence length " + std::to_string(n) + " exceeds encoder width " +
                     std::to_string(w.dim(1)));
  }
  return add(matmul(x, enc_weight(w, n)), enc_bias(b, n));
}

}  // namespace

void BabnConstants::validate() const {
  if (!(beta > 0.0)) throw ParameterError("beta must be > 0");
  if (!(rho >= 0.0)) throw ParameterError("rho must be >= 0");
  if (!(sigma >= 0.0)) throw ParameterError("sigma must be >= 0");
}

std::vector<std::pair<std::string, Shape>> BabnParams::layout(const AttentionConfig& cfg) {
  const std::size_t dk = cfg.d_k(), h = cfg.n_heads, n = cfg.max_seq_len;
  std::vector<std::pair<std::string, Shape>> out;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    out.push_back({p + "prior.w1", {dk, dk}});
    out.push_back({p + "prior.b1", {dk}});
    out.push_back({p + "prior.w2", {dk, 1}});
    out.push_back({p + "prior.b2", {1}});
    for (const char* i : {"1", "2", "3"}) {
      out.push_back({p + "enc.w" + i, {h, n, n}});
      out.push_back({p + "enc.b" + i, {h, n}});
    }
  }
  return out;
}

NamedTensors BabnParams::named() const {
  NamedTensors out;
  for (std::size_t l = 0; l < prior.size(); ++l) {
    const std::string p = layer_prefix(l);
    const PriorNetLayer& pr = prior[l];
    const EncoderNetLayer& en = encoder[l];
    out.insert(out.end(), {{p + "prior.w1", pr.w1},
                           {p + "prior.b1", pr.b1},
                           {p + "prior.w2", pr.w2},
                           {p + "prior.b2", pr.b2},
                           {p + "enc.w1", en.w1},
                           {p + "enc.b1", en.b1},
                           {p + "enc.w2", en.w2},
                           {p + "enc.b2", en.b2},
                           {p + "enc.w3", en.w3},
                           {p + "enc.b3", en.b3}});
  }
  return out;
}

BabnParams BabnParams::init(const AttentionConfig& cfg, RngStream& rng) {
  cfg.validate();
  NamedTensors t;
  for (const auto& [name, shape] : layout(cfg)) {
    std::vector<double> v(shape_numel(shape));
    const bool is_bias = name.find(".b") != std::string::npos;
    if (is_bias) {
      const double init = name.find("enc.") != std::string::npos ? kEncoderBiasInit : 0.0;
      std::fill(v.begin(), v.end(), init);
    } else {
      for (double& x : v) x = kNewWeightStd * rng.normal();
    }
    t.push_back({name, Tensor::parameter(shape, std::move(v))});
  }
  return bind(cfg, t);
}

BabnParams BabnParams::bind(const AttentionConfig& cfg, const NamedTensors& tensors) {
  std::map<std::string, Tensor> by_name(tensors.begin(), tensors.end());
  const auto lay = layout(cfg);
  std::map<std::string, Shape> shapes(lay.begin(), lay.end());
  std::string missing;
  auto get = [&](const std::string& name) -> Tensor {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      missing += " " + name;
      return Tensor::zeros(shapes[name]);
    }
    if (it->second.shape() != shapes[name]) {
      throw ConversionError("tensor " + name + " has shape " + shape_str(it->second.shape()) +
                            ", expected " + shape_str(shapes[name]));
    }
    return it->second;
  };
  BabnParams p;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    p.prior.push_back({get(pre + "prior.w1"), get(pre + "prior.b1"), get(pre + "prior.w2"),
                       get(pre + "prior.b2")});
    p.encoder.push_back({get(pre + "enc.w1"), get(pre + "enc.b1"), get(pre + "enc.w2"),
                         get(pre + "enc.b2"), get(pre + "enc.w3"), get(pre + "enc.b3")});
  }
  if (!missing.empty()) throw ConversionError("missing tensors:" + missing);
  return p;
}

Tensor prior_alpha(const Tensor& keys, const PriorNetLayer& net) {
  if (keys.rank() != 4) throw DimensionError("prior_alpha expects keys [B,H,T,d_k]");
  const std::size_t b = keys.dim(0), h = keys.dim(1), n = keys.dim(2);
  const Tensor hidden = relu(add(matmul(keys, net.w1), net.b1));
  const Tensor logits = add(matmul(hidden, net.w2), net.b2);  // [B,H,T,1]
  return softmax(reshape(logits, {b, h, 1, n}), -1);
}

std::vector<Tensor> upward_pass(const Tensor& phi1, const std::vector<EncoderNetLayer>& encoder) {
  const std::size_t layers = encoder.size();
  std::vector<Tensor> h(layers + 1);
  h[layers] = softmax(phi1, -1);
  for (std::size_t l = layers; l-- > 0;) {
    h[l] = softplus(key_axis_linear(h[l + 1], encoder[l].w3, encoder[l].b3));
  }
  return h;
}

EncoderOutput encoder_params(const Tensor& phi, const Tensor& h, const EncoderNetLayer& net,
                             const BabnConstants& c) {
  Tensor k = exp(phi);
  if (c.rho > 0.0) k = add(k, scale(softplus(key_axis_linear(h, net.w1, net.b1)), c.rho));
  k = floor_at(k, kShapeFloor);
  const Tensor lg = lgamma(add_scalar(reciprocal(k), 1.0));
  Tensor log_lam = sub(phi, lg);
  if (c.sigma > 0.0) {
    const Tensor log_h_term =
        add_scalar(log_softplus(key_axis_linear(h, net.w2, net.b2)), std::log(c.sigma));
    log_lam = logaddexp(log_h_term, log_lam);
  }
  check_finite(k, "Weibull shape k");
  check_finite(log_lam, "Weibull scale log(lam)");
  return {k, log_lam, lg};
}

LayerIo babn_layer_forward(const Tensor& x, const LayerParams& layer, const HeadProjections& proj,
                           const Tensor& phi, const Tensor& h, const PriorNetLayer& prior,
                           const EncoderNetLayer& enc, const BabnConstants& c,
                           const AttentionConfig& cfg, ForwardMode mode, RngStream* rng) {
  (void)cfg;
  LayerTrace tr;
  tr.phi = phi;
  tr.h = h;
  tr.alpha = prior_alpha(proj.k, prior);
  const EncoderOutput q = encoder_params(phi, h, enc, c);
  tr.k = q.k;
  tr.log_lam = q.log_lam;
  if (mode == ForwardMode::kSample) {
    if (rng == nullptr) throw ParameterError("sample mode needs a random stream");
    tr.eps = sample_uniform(kEpsLo, kEpsHi, phi.shape(), *rng);
    tr.log_s = weibull_log_reparam(q.k, q.log_lam, tr.eps);
  } else {
    tr.log_s = add(q.log_lam, q.log_gamma_term);
  }
  tr.w = softmax(tr.log_s, -1);
  const Tensor kl = kl_weibull_gamma_log(q.k, q.log_lam, tr.alpha, c.beta);
  tr.kl = scale(sum(kl), 1.0 / static_cast<double>(x.dim(0)));
  LayerIo io;
  io.output = block_output(x, merge_heads(matmul(tr.w, proj.v)), layer);
  io.trace = std::move(tr);
  return io;
}

Model::Model(AttentionConfig cfg, ModelKind kind, BabnConstants constants, BaseParams base,
             std::optional<BabnParams> babn)
    : cfg_(cfg), kind_(kind), constants_(constants), base_(std::move(base)), babn_(std::move(babn)) {
  cfg_.validate();
  constants_.validate();
  if ((kind_ == ModelKind::kBabn) != babn_.has_value()) {
    throw ParameterError("BABN parameters must be present exactly for BABN models");
  }
}

Model Model::init(const AttentionConfig& cfg, ModelKind kind, const BabnConstants& constants,
                  RngStream& rng) {
  RngStream base_rng = rng.split(1);
  BaseParams base = BaseParams::init(cfg, base_rng);
  std::optional<BabnParams> extra;
  if (kind == ModelKind::kBabn) {
    RngStream babn_rng = rng.split(2);
    extra = BabnParams::init(cfg, babn_rng);
  }
  return Model(cfg, kind, constants, std::move(base), std::move(extra));
}

void Model::set_constants(const BabnConstants& c) {
  c.validate();
  constants_ = c;
}

NamedTensors Model::named_parameters() const {
  NamedTensors out = base_.named();
  if (babn_) {
    const NamedTensors extra = babn_->named();
    out.insert(out.end(), extra.begin(), extra.end());
  }
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ForwardResult Model::forward(const Batch& batch, ForwardMode mode, RngStream* rng) const {
  const std::size_t b = batch.size, t = batch.seq_len;
  Tensor x = embed(base_, batch.tokens, b, t);
  if (batch.input_noise.defined()) x = add(x, batch.input_noise);

  ForwardResult res;
  res.trace.mode = mode;
  if (kind_ == ModelKind::kDeterministic) {
    for (const LayerParams& layer : base_.layers) {
      LayerTrace tr;
      const HeadProjections p = project_heads(x, layer, cfg_);
      tr.phi = f_dot(p.q, p.k);
      tr.w = softmax(tr.phi, -1);
      x = block_output(x, merge_heads(matmul(tr.w, p.v)), layer);
      res.trace.layers.push_back(std::move(tr));
    }
  } else {
    const BabnParams& bp = *babn_;
    HeadProjections proj = project_heads(x, base_.layers[0], cfg_);
    Tensor phi = f_dot(proj.q, proj.k);
    // h depends on the input only: computed before any sampling
    res.trace.h = upward_pass(phi, bp.encoder);
    for (std::size_t l = 0; l < base_.layers.size(); ++l) {
      if (l > 0) {
        proj = project_heads(x, base_.layers[l], cfg_);
        phi = f_dot(proj.q, proj.k);
      }
      LayerIo io = babn_layer_forward(x, base_.layers[l], proj, phi, res.trace.h[l], bp.prior[l],
                                      bp.encoder[l], constants_, cfg_, mode, rng);
      x = io.output;
      res.kl_per_layer.push_back(io.trace.kl);
      res.trace.layers.push_back(std::move(io.trace));
    }
  }
  res.logits = classifier_head(base_, x, cfg_);
  return res;
}

Model Model::clone() const {
  NamedTensors copies;
  for (const auto& [name, t] : named_parameters()) copies.push_back({name, t.clone()});
  std::optional<BabnParams> extra;
  if (babn_) extra = BabnParams::bind(cfg_, copies);
  return Model(cfg_, kind_, constants_, BaseParams::bind(cfg_, copies), std::move(extra));
}

void Model::load_values(const Model& other) {
  const NamedTensors mine = named_parameters();
  const NamedTensors theirs = other.named_parameters();
  if (mine.size() != theirs.size()) throw ParameterError("load_values: parameter sets differ");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].first != theirs[i].first || mine[i].second.shape() != theirs[i].second.shape()) {
      throw ParameterError("load_values: mismatch at " + mine[i].first);
    }
    Tensor dst = mine[i].second;
    auto src = theirs[i].second.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

AttentionStats posterior_stats(const Model& model, std::span<const int> tokens,
                               std::size_t samples, RngStream& rng) {
  if (samples < 2) throw ParameterError("posterior_stats needs at least 2 samples");
  const AttentionConfig& cfg = model.config();
  Batch batch;
  batch.size = 1;
  batch.seq_len = tokens.size();
  batch.tokens.assign(tokens.begin(), tokens.end());
  AttentionStats st;
  st.layers = cfg.n_layers;
  st.heads = cfg.n_heads;
  st.seq_len = tokens.size();
  const std::size_t per_layer = st.heads * st.seq_len * st.seq_len;
  std::vector<double> s1(st.layers * per_layer, 0.0), s2(st.layers * per_layer, 0.0);
  NoGradGuard guard;
  for (std::size_t m = 0; m < samples; ++m) {
    RngStream draw = rng.split(m);
    const ForwardResult r = model.forward(batch, ForwardMode::kSample, &draw);
    for (std::size_t l = 0; l < st.layers; ++l) {
      const auto w = r.trace.layers[l].w.data();
      for (std::size_t i = 0; i < per_layer; ++i) {
        s1[l * per_layer + i] += w[i];
        s2[l * per_layer + i] += w[i] * w[i];
      }
    }
  }
  const double m = static_cast<double>(samples);
  st.mean.resize(s1.size());
  st.std_over_mean.resize(s1.size());
  for (std::size_t i = 0; i < s1.size(); ++i) {
    const double mu = s1[i] / m;
    const double var = std::max(0.0, (s2[i] - m * mu * mu) / (m - 1.0));
    st.mean[i] = mu;
    st.std_over_mean[i] = mu > 0.0 ? std::sqrt(var) / mu : 0.0;
  }
  return st;
}

}  // namespace babn
