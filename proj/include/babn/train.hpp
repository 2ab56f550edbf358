// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// ELBO objective, KL annealing, Adam and the training loop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "babn/babn_net.hpp"
#include "babn/data.hpp"
#include "babn/gradcheck.hpp"
#include "babn/rng.hpp"
#include "babn/tensor.hpp"

namespace babn {

/// KL weight ramps linearly from w0 to 1 over `warmup_steps`, then stays at 1.
struct AnnealSchedule {
  double w0 = 1e-3;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;

  /// w0 = 1e-3 with a warmup of 10% of `total_steps`.
  static AnnealSchedule standard(std::size_t total_steps);
  void validate() const;
};

double kl_anneal(std::size_t step, const AnnealSchedule& schedule);

/// loss = NLL(y | logits) + kl_weight * sum(kl_terms) / kl_normalizer.
Tensor elbo_loss(const Tensor& logits, std::span<const int> labels,
                 const std::vector<Tensor>& kl_terms, double kl_weight,
                 double kl_normalizer = 1.0);

/// Per-layer KL values and the largest |Phi|, for reporting a non-finite loss.
std::string elbo_diagnostics(const ForwardResult& result);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  /// Applies one update from the accumulated gradients. Returns false (and
  /// leaves parameters and moments untouched) when any gradient is non-finite.
  bool step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 32;
  AdamConfig adam;
  double clip_norm = 1.0;
  std::size_t eval_every = 200;
  /// Anneal start weight; warmup is warmup_fraction * steps.
  double kl_w0 = 1e-3;
  double warmup_fraction = 0.1;
  /// Cap on validation examples per evaluation (0 = all).
  std::size_t eval_limit = 0;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double nll = 0.0;
  double kl = 0.0;  // sum over layers, before weighting and normalization
  double kl_weight = 0.0;
  double loss = 0.0;
  /// Per-example annealed ELBO estimate (-loss).
  double elbo = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
};

struct EvalRecord {
  std::size_t step = 0;
  double accuracy = 0.0;
  double nll = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::size_t best_step = 0;
  double best_accuracy = -1.0;
  bool diverged = false;
  std::string diagnostics;
};

struct EvalSummary {
  double accuracy = 0.0;
  double nll = 0.0;
  std::size_t count = 0;
};

/// Posterior-mean accuracy and mean NLL per label over `data`.
EvalSummary evaluate(const Model& model, const Dataset& data, std::size_t batch_size = 256,
                     std::size_t limit = 0);

struct TrainResult {
  Model best;
  TrainHistory history;
};

/// Each step draws a batch and one eps sample, minimizes the annealed negative
/// ELBO, clips, and takes an Adam step. Every `eval_every` steps (and at the
/// last step) validation accuracy is measured in posterior-mean mode; the best
/// model is returned. Two consecutive non-finite losses abort with
/// history.diverged set. `model` holds the final parameters afterwards.
TrainResult train(Model& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, RngStream& rng);

/// Gradient check of elbo_loss with eps frozen to draws from RngStream(eps_seed).
GradcheckResult gradcheck_elbo(const Model& model, const Batch& batch, std::uint64_t eps_seed,
                               double nll_weight, double kl_weight,
                               const GradcheckOptions& opts = {});

}  // namespace babn
