// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "babn/babn_net.hpp"
#include "babn/error.hpp"
#include "babn/gradcheck.hpp"
#include "babn/special.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace babn;
using doctest::Approx;

namespace {

AttentionConfig toy_config(std::size_t layers = 2, std::size_t d = 8, std::size_t heads = 2) {
  AttentionConfig c;
  c.d_model = d;
  c.n_heads = heads;
  c.n_layers = layers;
  c.ffn_hidden = 2 * d;
  c.vocab_size = 6;
  c.max_seq_len = 5;
  c.n_classes = 4;
  c.output = OutputKind::kTagging;
  return c;
}

Batch random_batch(const AttentionConfig& cfg, std::size_t b, std::size_t t, RngStream& rng) {
  Batch batch;
  batch.size = b;
  batch.seq_len = t;
  for (std::size_t i = 0; i < b * t; ++i) {
    batch.tokens.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
    batch.labels.push_back(static_cast<int>(rng.below(cfg.n_classes)));
  }
  return batch;
}

void fill(Tensor t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

Model deterministic_twin(const Model& m) {
  return Model(m.config(), ModelKind::kDeterministic, m.constants(), m.base(), std::nullopt);
}

}  // namespace

TEST_CASE("constants validation") {
  CHECK_NOTHROW(BabnConstants{}.validate());
  CHECK_THROWS_AS((BabnConstants{0.0, 1.5, 1e-6}.validate()), ParameterError);
  CHECK_THROWS_AS((BabnConstants{1.0, -1.0, 1e-6}.validate()), ParameterError);
  CHECK_THROWS_AS((BabnConstants{1.0, 1.5, -1.0}.validate()), ParameterError);
}

TEST_CASE("prior_alpha") {
  const AttentionConfig cfg = toy_config();
  RngStream rng(1);
  const BabnParams bp = BabnParams::init(cfg, rng);
  const Tensor keys = test::randn_param({2, 2, 4, 4}, rng);
  PriorNetLayer zero_net = bp.prior[0];
  zero_net.w1 = Tensor::zeros(zero_net.w1.shape());
  zero_net.w2 = Tensor::zeros(zero_net.w2.shape());
  zero_net.b1 = Tensor::zeros(zero_net.b1.shape());
  zero_net.b2 = Tensor::zeros(zero_net.b2.shape());
  const Tensor u = prior_alpha(keys, zero_net);
  CHECK(u.shape() == Shape{2, 2, 1, 4});
  for (double v : u.values()) CHECK(v == Approx(0.25).epsilon(1e-15));

  const Tensor a = prior_alpha(test::randn_param({1, 2, 4, 4}, rng, 3.0), bp.prior[0]);
  for (std::size_t h = 0; h < 2; ++h) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double v = a.at({0, h, 0, j});
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(s == Approx(1.0).epsilon(1e-14));
  }
  const Tensor one = prior_alpha(test::randn_param({1, 2, 1, 4}, rng), bp.prior[0]);
  for (double v : one.values()) CHECK(v == 1.0);
}

TEST_CASE("upward_pass") {
  const AttentionConfig cfg = toy_config(3);
  RngStream rng(2);
  BabnParams bp = BabnParams::init(cfg, rng);
  const Tensor phi = test::randn_param({1, 2, 4, 4}, rng, 2.0);
  std::vector<EncoderNetLayer> zeroed = bp.encoder;
  for (auto& e : zeroed) {
    e.w3 = Tensor::zeros(e.w3.shape());
    e.b3 = Tensor::zeros(e.b3.shape());
  }
  const std::vector<Tensor> h = upward_pass(phi, zeroed);
  REQUIRE(h.size() == 4);
  for (std::size_t l = 0; l < 3; ++l)
    for (double v : h[l].values()) CHECK(v == Approx(std::log(2.0)).epsilon(1e-15));
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += h[3][r * 4 + j];
    CHECK(s == Approx(1.0).epsilon(1e-14));
  }
  std::vector<double> edge(32);
  for (std::size_t i = 0; i < 32; ++i) edge[i] = i % 2 ? 30.0 : -30.0;
  const auto he = upward_pass(Tensor::from({1, 2, 4, 4}, edge), bp.encoder);
  for (const Tensor& t : he) {
    CHECK(all_finite(t));
    for (double v : t.values()) CHECK(v > 0.0);
  }
}

TEST_CASE("encoder_params specializations") {
  const AttentionConfig cfg = toy_config();
  RngStream rng(3);
  const BabnParams bp = BabnParams::init(cfg, rng);
  const Tensor phi = test::randn_param({1, 2, 4, 4}, rng, 2.0);
  const Tensor h = upward_pass(phi, bp.encoder)[0];

  const EncoderOutput plain = encoder_params(phi, h, bp.encoder[0], {1.0, 0.0, 0.0});
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double k = std::exp(phi[i]);
    CHECK(plain.k[i] == Approx(std::max(k, kShapeFloor)).epsilon(1e-14));
    const double lam = std::exp(phi[i]) / std::tgamma(1.0 + 1.0 / plain.k[i]);
    CHECK(std::exp(plain.log_lam[i]) == Approx(lam).epsilon(1e-10));
  }

  const EncoderOutput q = encoder_params(phi, h, bp.encoder[0], {1.0, 1.5, 0.0});
  const Tensor mean_s = weibull_mean({q.k, exp(q.log_lam)});
  for (std::size_t i = 0; i < phi.size(); ++i) {
    CHECK(std::abs(mean_s[i] / std::exp(phi[i]) - 1.0) < 1e-9);
  }

  double prev_rho = 0.0;
  Tensor prev_k = encoder_params(phi, h, bp.encoder[0], {1.0, prev_rho, 1e-6}).k;
  for (double rho : {0.5, 1.5, 4.0}) {
    const Tensor k = encoder_params(phi, h, bp.encoder[0], {1.0, rho, 1e-6}).k;
    for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i] >= prev_k[i]);
    prev_k = k;
  }
  // the h-weighted scale term only adds mass
  const EncoderOutput s1 = encoder_params(phi, h, bp.encoder[0], {1.0, 1.5, 0.5});
  for (std::size_t i = 0; i < phi.size(); ++i) CHECK(s1.log_lam[i] > q.log_lam[i]);
}

TEST_CASE("posterior-mean recovery with sigma = 0") {
  for (std::size_t layers : {1u, 2u, 3u}) {
    const AttentionConfig cfg = toy_config(layers);
    RngStream rng(10 + layers);
    const Model m = Model::init(cfg, ModelKind::kBabn, {1.0, 1.5, 0.0}, rng);
    const Model det = deterministic_twin(m);
    const Batch batch = random_batch(cfg, 6, 5, rng);
    const ForwardResult a = m.forward(batch, ForwardMode::kPosteriorMean);
    const ForwardResult b = det.forward(batch, ForwardMode::kPosteriorMean);
    CHECK(test::max_abs_diff(a.logits.data(), b.logits.data()) < 1e-6);
    for (std::size_t l = 0; l < layers; ++l) {
      CHECK(test::max_abs_diff(a.trace.layers[l].w.data(), b.trace.layers[l].w.data()) < 1e-9);
      CHECK(test::max_abs_diff(a.trace.layers[l].w.data(),
                               softmax(a.trace.layers[l].phi, -1).data()) < 1e-9);
    }
  }
}

TEST_CASE("babn layer forward: single layer recovery, reproducibility, KL sign") {
  const AttentionConfig cfg = toy_config(1);
  RngStream rng(4);
  const Model m = Model::init(cfg, ModelKind::kBabn, {1.0, 1.5, 0.0}, rng);
  const Batch batch = random_batch(cfg, 3, 4, rng);
  const Tensor x = embed(m.base(), batch.tokens, 3, 4);
  const HeadProjections proj = project_heads(x, m.base().layers[0], cfg);
  const Tensor phi = f_dot(proj.q, proj.k);
  const Tensor h = upward_pass(phi, m.babn()->encoder)[0];
  const LayerIo pm = babn_layer_forward(x, m.base().layers[0], proj, phi, h, m.babn()->prior[0],
                                        m.babn()->encoder[0], m.constants(), cfg,
                                        ForwardMode::kPosteriorMean, nullptr);
  const Tensor det = deterministic_attention(x, m.base().layers[0], cfg);
  CHECK(test::max_abs_diff(pm.output.data(), det.data()) < 1e-6);
  CHECK(!pm.trace.eps.defined());

  RngStream r1(99), r2(99);
  auto sample = [&](RngStream& r) {
    return babn_layer_forward(x, m.base().layers[0], proj, phi, h, m.babn()->prior[0],
                              m.babn()->encoder[0], m.constants(), cfg, ForwardMode::kSample, &r);
  };
  const LayerIo s1 = sample(r1), s2 = sample(r2);
  CHECK(s1.output.values() == s2.output.values());
  CHECK(s1.trace.kl.item() >= -1e-8);
  CHECK(pm.trace.kl.item() >= -1e-8);
  CHECK_THROWS_AS(babn_layer_forward(x, m.base().layers[0], proj, phi, h, m.babn()->prior[0],
                                     m.babn()->encoder[0], m.constants(), cfg,
                                     ForwardMode::kSample, nullptr),
                  ParameterError);
}

TEST_CASE("sampled forwards: positivity, rows, seeds, and the deterministic upward path") {
  const AttentionConfig cfg = toy_config(2);
  RngStream rng(5);
  const Model m = Model::init(cfg, ModelKind::kBabn, BabnConstants{}, rng);
  const Batch batch = random_batch(cfg, 4, 5, rng);
  RngStream a(1), b(1), c(2);
  const ForwardResult fa = m.forward(batch, ForwardMode::kSample, &a);
  const ForwardResult fb = m.forward(batch, ForwardMode::kSample, &b);
  const ForwardResult fc = m.forward(batch, ForwardMode::kSample, &c);
  CHECK(fa.logits.values() == fb.logits.values());
  CHECK(fa.logits.values() != fc.logits.values());
  REQUIRE(fa.trace.h.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) CHECK(fa.trace.h[l].values() == fc.trace.h[l].values());
  for (const LayerTrace& t : fa.trace.layers) {
    for (double v : t.log_s.values()) CHECK(std::isfinite(v));  // S = exp(log S) > 0
    for (std::size_t r = 0; r < t.w.size() / 5; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += t.w[r * 5 + j];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
    for (double e : t.eps.values()) CHECK((e >= kEpsLo && e < kEpsHi));
  }
  CHECK(fa.kl_per_layer.size() == 2);
  CHECK_THROWS_AS(m.forward(batch, ForwardMode::kSample, nullptr), ParameterError);
}

TEST_CASE("posterior-mean forwards consume no randomness") {
  const AttentionConfig cfg = toy_config(2);
  RngStream rng(6);
  const Model m = Model::init(cfg, ModelKind::kBabn, BabnConstants{}, rng);
  const Batch batch = random_batch(cfg, 2, 5, rng);
  RngStream r(3);
  const ForwardResult f = m.forward(batch, ForwardMode::kPosteriorMean, &r);
  CHECK(r.counter() == 0);
  CHECK(f.trace.mode == ForwardMode::kPosteriorMean);
}

TEST_CASE("per-layer KL is invariant to relabeling heads") {
  const AttentionConfig cfg = toy_config(2, 8, 2);
  RngStream rng(7);
  const Model m = Model::init(cfg, ModelKind::kBabn, BabnConstants{}, rng);
  const std::size_t dk = cfg.d_k(), d = cfg.d_model;
  // swap head 0 and head 1 everywhere they are distinguishable
  NamedTensors swapped;
  for (const auto& [name, t] : m.named_parameters()) {
    std::vector<double> v = t.values();
    const std::string tail = name.substr(name.find('.') + 1);
    if (tail == "attn.wq" || tail == "attn.wk" || tail == "attn.wv") {
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < dk; ++c) std::swap(v[r * d + c], v[r * d + dk + c]);
    } else if (tail == "attn.bq" || tail == "attn.bk" || tail == "attn.bv") {
      for (std::size_t c = 0; c < dk; ++c) std::swap(v[c], v[dk + c]);
    } else if (tail == "attn.wo") {
      for (std::size_t r = 0; r < dk; ++r)
        for (std::size_t c = 0; c < d; ++c) std::swap(v[r * d + c], v[(dk + r) * d + c]);
    } else if (tail.rfind("enc.", 0) == 0) {
      const std::size_t per = v.size() / 2;
      for (std::size_t i = 0; i < per; ++i) std::swap(v[i], v[per + i]);
    }
    swapped.push_back({name, Tensor::parameter(t.shape(), v)});
  }
  const Model p(cfg, ModelKind::kBabn, m.constants(), BaseParams::bind(cfg, swapped),
                BabnParams::bind(cfg, swapped));
  const Batch batch = random_batch(cfg, 3, 5, rng);
  const ForwardResult a = m.forward(batch, ForwardMode::kPosteriorMean);
  const ForwardResult b = p.forward(batch, ForwardMode::kPosteriorMean);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(b.kl_per_layer[l].item() == Approx(a.kl_per_layer[l].item()).epsilon(1e-10));
  }
  CHECK(test::max_abs_diff(a.logits.data(), b.logits.data()) < 1e-10);
}

TEST_CASE("ELBO gradient on a 3-token model with frozen eps") {
  AttentionConfig cfg = toy_config(2, 8, 2);
  cfg.max_seq_len = 3;
  RngStream rng(8);
  const Model m = Model::init(cfg, ModelKind::kBabn, BabnConstants{}, rng);
  const Batch batch = random_batch(cfg, 2, 3, rng);
  auto loss = [&] {
    RngStream frozen(123);
    const ForwardResult f = m.forward(batch, ForwardMode::kSample, &frozen);
    Tensor l = cross_entropy(f.logits, batch.labels);
    for (const Tensor& kl : f.kl_per_layer) l = add(l, kl);
    return l;
  };
  GradcheckOptions opts;
  const GradcheckResult r = gradcheck(loss, m.parameters(), opts);
  INFO("worst param " << m.named_parameters()[r.worst_param].first << " index " << r.worst_index);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("posterior_stats") {
  const AttentionConfig cfg = toy_config(2);
  RngStream rng(9);
  Model m = Model::init(cfg, ModelKind::kBabn, {1.0, 1e4, 0.0}, rng);
  for (const EncoderNetLayer& e : m.babn()->encoder) fill(e.b1, 10.0);
  const std::vector<int> tokens{1, 2, 3, 4, 0};
  RngStream s(1);
  const AttentionStats tight = posterior_stats(m, tokens, 20, s);
  CHECK(tight.mean.size() == 2 * 2 * 5 * 5);
  double max_cv = 0.0;
  for (double v : tight.std_over_mean) max_cv = std::max(max_cv, v);
  CHECK(max_cv < 1e-4);

  m.set_constants(BabnConstants{});
  for (const EncoderNetLayer& e : m.babn()->encoder) fill(e.b1, -3.0);
  RngStream s2(2);
  const AttentionStats loose = posterior_stats(m, tokens, 20, s2);
  double cv = 0.0;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 5; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          row += loose.at(loose.mean, l, h, i, j);
          cv += loose.at(loose.std_over_mean, l, h, i, j);
        }
        CHECK(row == Approx(1.0).epsilon(1e-9));
      }
  CHECK(cv > 0.0);
  RngStream s3(3);
  CHECK_THROWS_AS(posterior_stats(m, tokens, 1, s3), ParameterError);
}

// Expected trend: a larger sigma never lowers the average std/mean of W.
// It does not hold for this network: the sigma term only raises lam and
// leaves k alone, which flattens the weights, and the average std/mean falls
// in 17 of 20 random models. This case fails.
TEST_CASE("raising sigma does not lower average posterior dispersion") {
  const AttentionConfig cfg = toy_config(2);
  const std::vector<int> tokens{1, 2, 3, 4, 0};
  int nondecreasing = 0;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng(1000 + trial);
    Model m = Model::init(cfg, ModelKind::kBabn, {1.0, 1.5, 1e-6}, rng);
    auto avg_cv = [&](double sigma) {
      m.set_constants({1.0, 1.5, sigma});
      RngStream s(trial);
      const AttentionStats st = posterior_stats(m, tokens, 20, s);
      double acc = 0.0;
      for (double v : st.std_over_mean) acc += v;
      return acc / st.std_over_mean.size();
    };
    const double lo = avg_cv(1e-6), hi = avg_cv(1.0);
    nondecreasing += hi >= lo;
  }
  CHECK(nondecreasing >= 18);
}

TEST_CASE("params: layout, bind, clone, load_values") {
  const AttentionConfig cfg = toy_config(2);
  RngStream rng(11);
  const Model m = Model::init(cfg, ModelKind::kBabn, BabnConstants{}, rng);
  CHECK(m.named_parameters().size() ==
        BaseParams::layout(cfg).size() + BabnParams::layout(cfg).size());
  for (const auto& [name, t] : m.babn()->named()) {
    if (name.find("enc.b") != std::string::npos) {
      for (double v : t.values()) CHECK(v == -3.0);
    }
  }
  Model c = m.clone();
  CHECK(c.named_parameters()[0].second.values() == m.named_parameters()[0].second.values());
  fill(c.named_parameters()[0].second, 0.0);
  CHECK(c.named_parameters()[0].second.values() != m.named_parameters()[0].second.values());
  c.load_values(m);
  CHECK(c.named_parameters()[0].second.values() == m.named_parameters()[0].second.values());
  const Model det = Model::init(cfg, ModelKind::kDeterministic, BabnConstants{}, rng);
  CHECK_THROWS_AS(c.load_values(det), ParameterError);
  CHECK_THROWS_AS(Model(cfg, ModelKind::kBabn, BabnConstants{}, det.base(), std::nullopt),
                  ParameterError);
}

TEST_CASE("shorter sequences slice the encoder maps") {
  const AttentionConfig cfg = toy_config(2);
  RngStream rng(12);
  const Model m = Model::init(cfg, ModelKind::kBabn, BabnConstants{}, rng);
  const Batch b3 = random_batch(cfg, 2, 3, rng);
  const ForwardResult f = m.forward(b3, ForwardMode::kPosteriorMean);
  CHECK(f.logits.shape() == Shape{6, 4});
  CHECK(f.trace.layers[0].alpha.shape() == Shape{2, 2, 1, 3});
}
