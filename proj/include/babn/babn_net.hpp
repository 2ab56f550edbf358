// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Bayesian attention belief network layers. Unnormalized attention weights S
// get a Gamma(alpha, beta) prior whose shape comes from the layer's keys and a
// Weibull(k, lam) variational posterior driven by the logits Phi and by a
// deterministic path h that runs top-down from softmax(Phi of layer 1).
// Weights are normalized in log space: f_norm(S) == softmax(log S).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "babn/attention.hpp"
#include "babn/data.hpp"
#include "babn/randvar.hpp"
#include "babn/rng.hpp"
#include "babn/tensor.hpp"

namespace babn {

/// Lower bound applied to the Weibull shape wherever its reciprocal is taken.
inline constexpr double kShapeFloor = 1e-4;
/// Training draws eps from this sub-interval of (0, 1).
inline constexpr double kEpsLo = 0.1;
inline constexpr double kEpsHi = 0.9;

enum class ModelKind { kDeterministic, kBabn };
enum class ForwardMode { kSample, kPosteriorMean };

struct BabnConstants {
  double beta = 1.0;
  double rho = 1.5;
  double sigma = 1e-6;

  void validate() const;
  bool operator==(const BabnConstants&) const = default;
};

/// Per-layer f_eta: d_k -> d_k -> 1, shared by the layer's heads.
struct PriorNetLayer {
  Tensor w1, b1, w2, b2;
};

/// Per-layer f_phi,1..3, stacked over heads: w [H x n_max x n_max],
/// b [H x n_max], acting on the key axis of h.
struct EncoderNetLayer {
  Tensor w1, b1, w2, b2, w3, b3;
};

struct BabnParams {
  std::vector<PriorNetLayer> prior;
  std::vector<EncoderNetLayer> encoder;

  NamedTensors named() const;
  static std::vector<std::pair<std::string, Shape>> layout(const AttentionConfig& cfg);
  /// Weights ~ N(0, 0.02^2); encoder biases -3, prior biases 0.
  static BabnParams init(const AttentionConfig& cfg, RngStream& rng);
  static BabnParams bind(const AttentionConfig& cfg, const NamedTensors& tensors);
};

/// Everything a forward pass computed for one layer; per-head tensors are
/// [B, H, T, T] except alpha, which is [B, H, 1, T] (shared by all queries).
struct LayerTrace {
  Tensor phi;
  Tensor alpha;
  Tensor k;
  Tensor log_lam;
  Tensor log_s;  // log of the sampled S, or of its posterior mean
  Tensor w;
  Tensor h;
  Tensor eps;  // empty in posterior-mean mode
  Tensor kl;   // scalar, summed over heads and entries, averaged over batch
};

struct ForwardTrace {
  ForwardMode mode = ForwardMode::kPosteriorMean;
  std::vector<LayerTrace> layers;
  /// h^1 .. h^{L+1}; index l-1 holds h^l.
  std::vector<Tensor> h;
};

struct ForwardResult {
  Tensor logits;
  std::vector<Tensor> kl_per_layer;  // empty for deterministic models
  ForwardTrace trace;
};

/// alpha = softmax over keys of f_eta,2(ReLU(f_eta,1(K))); K [B,H,T,d_k] -> [B,H,1,T].
Tensor prior_alpha(const Tensor& keys, const PriorNetLayer& net);

/// h^{L+1} = softmax(Phi^1), then h^l = softplus(f_phi,3^l(h^{l+1})) for l = L..1.
/// Returns h^1 .. h^{L+1}.
std::vector<Tensor> upward_pass(const Tensor& phi1, const std::vector<EncoderNetLayer>& encoder);

struct EncoderOutput {
  Tensor k;        // floored at kShapeFloor
  Tensor log_lam;
  Tensor log_gamma_term;  // lgamma(1 + 1/k)
};

/// k = rho*softplus(f_phi,1(h)) + exp(Phi);
/// lam = sigma*softplus(f_phi,2(h)) + exp(Phi) / Gamma(1 + 1/k).
EncoderOutput encoder_params(const Tensor& phi, const Tensor& h, const EncoderNetLayer& net,
                             const BabnConstants& c);

struct LayerIo {
  Tensor output;
  LayerTrace trace;
};

LayerIo babn_layer_forward(const Tensor& x, const LayerParams& layer, const HeadProjections& proj,
                           const Tensor& phi, const Tensor& h, const PriorNetLayer& prior,
                           const EncoderNetLayer& enc, const BabnConstants& c,
                           const AttentionConfig& cfg, ForwardMode mode, RngStream* rng);

/// A deterministic attention model or its Bayesian counterpart.
class Model {
 public:
  Model(AttentionConfig cfg, ModelKind kind, BabnConstants constants, BaseParams base,
        std::optional<BabnParams> babn);

  static Model init(const AttentionConfig& cfg, ModelKind kind, const BabnConstants& constants,
                    RngStream& rng);

  const AttentionConfig& config() const { return cfg_; }
  ModelKind kind() const { return kind_; }
  const BabnConstants& constants() const { return constants_; }
  void set_constants(const BabnConstants& c);
  const BaseParams& base() const { return base_; }
  const std::optional<BabnParams>& babn() const { return babn_; }

  /// Every trainable tensor, in a stable order.
  NamedTensors named_parameters() const;
  std::vector<Tensor> parameters() const;

  /// Runs the network bottom-up. In sample mode `rng` supplies eps for
  /// every BABN layer; posterior-mean mode consumes no randomness.
  ForwardResult forward(const Batch& batch, ForwardMode mode, RngStream* rng = nullptr) const;

  /// Deep copy with fresh parameter storage.
  Model clone() const;
  /// Copies parameter values from `other` (same layout).
  void load_values(const Model& other);

 private:
  AttentionConfig cfg_;
  ModelKind kind_;
  BabnConstants constants_;
  BaseParams base_;
  std::optional<BabnParams> babn_;
};

/// Per layer and head: elementwise mean and std/mean of normalized weights.
struct AttentionStats {
  std::size_t layers = 0, heads = 0, seq_len = 0;
  std::vector<double> mean;          // [L][H][T][T]
  std::vector<double> std_over_mean;
  double at(const std::vector<double>& v, std::size_t l, std::size_t h, std::size_t i,
            std::size_t j) const {
    return v[((l * heads + h) * seq_len + i) * seq_len + j];
  }
};

/// Statistics of W over `samples` sampled forwards of a single sequence.
AttentionStats posterior_stats(const Model& model, std::span<const int> tokens,
                               std::size_t samples, RngStream& rng);

}  // namespace babn
