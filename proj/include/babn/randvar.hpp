// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Weibull and gamma distributions over tensors: reparameterized sampling,
// log densities, the closed-form KL(Weibull || Gamma), and Monte Carlo
// oracles used to test them.

#pragma once

#include <cstddef>
#include <vector>

#include "babn/rng.hpp"
#include "babn/tensor.hpp"

namespace babn {

/// Weibull(k, lam): shape k and scale lam, same shape, strictly positive.
struct WeibullParams {
  Tensor k;
  Tensor lam;

  void validate() const;
};

/// Gamma(alpha, beta) with a scalar rate broadcast over alpha.
struct GammaParams {
  Tensor alpha;
  double beta = 1.0;

  void validate() const;
};

/// I.i.d. draws on [lo, hi).
Tensor sample_uniform(double lo, double hi, const Shape& shape, RngStream& rng);

/// lam * (-log(1 - eps))^(1/k); differentiable in k and lam, eps is constant.
Tensor weibull_reparam(const WeibullParams& q, const Tensor& eps);

/// Reparameterized draw in log space: log lam + log(-log(1 - eps)) / k.
/// Stays finite where the direct form under- or overflows.
Tensor weibull_log_reparam(const Tensor& k, const Tensor& log_lam, const Tensor& eps);

/// lam * Gamma(1 + 1/k).
Tensor weibull_mean(const WeibullParams& q);

/// Elementwise KL(Weibull(k, lam) || Gamma(alpha, beta)).
Tensor kl_weibull_gamma(const WeibullParams& q, const GammaParams& p);

/// Same divergence with the scale given as log(lam). `alpha` may broadcast
/// into k's shape (right-aligned, unit dims expand).
Tensor kl_weibull_gamma_log(const Tensor& k, const Tensor& log_lam, const Tensor& alpha,
                            double beta);

Tensor weibull_log_pdf(const Tensor& s, const WeibullParams& q);
Tensor gamma_log_pdf(const Tensor& s, const GammaParams& p);

/// Marsaglia-Tsang gamma draws (no gradient), one per alpha entry.
Tensor sample_gamma(const GammaParams& p, RngStream& rng);
double sample_gamma(double alpha, double beta, RngStream& rng);

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Mean and standard error of log q(S) - log p(S) over n draws S ~ q using
/// full-support eps in (0, 1).
McEstimate kl_mc_oracle(double k, double lam, double alpha, double beta, std::size_t n,
                        RngStream& rng);
/// Elementwise version over tensor parameters.
std::vector<McEstimate> kl_mc_oracle(const WeibullParams& q, const GammaParams& p, std::size_t n,
                                     RngStream& rng);

}  // namespace babn
