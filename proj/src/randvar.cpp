// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/randvar.hpp"

#include <cmath>
#include <string>

#include "babn/special.hpp"

namespace babn {
namespace {

void require_positive(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError(std::string(what) + " must be positive and finite, got " +
                        std::to_string(v));
    }
  }
}

void require_open_unit(const Tensor& eps) {
  for (double v : eps.values()) {
    if (!(v > 0.0 && v < 1.0)) {
      throw DomainError("eps must lie in (0, 1), got " + std::to_string(v));
    }
  }
}

/// -log(1 - eps) as a constant tensor.
Tensor exp_quantile(const Tensor& eps) {
  std::vector<double> u(eps.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = -std::log1p(-eps[i]);
  return Tensor::from(eps.shape(), std::move(u));
}

}  // namespace

void WeibullParams::validate() const {
  if (k.shape() != lam.shape()) {
    throw DimensionError("Weibull k " + shape_str(k.shape()) + " vs lam " + shape_str(lam.shape()));
  }
  require_positive(k, "Weibull shape k");
  require_positive(lam, "Weibull scale lam");
}

void GammaParams::validate() const {
  require_positive(alpha, "Gamma shape alpha");
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw DomainError("Gamma rate beta must be positive, got " + std::to_string(beta));
  }
}

Tensor sample_uniform(double lo, double hi, const Shape& shape, RngStream& rng) {
  if (!(lo < hi)) {
    throw ParameterError("sample_uniform needs lo < hi, got [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + ")");
  }
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(shape, std::move(v));
}

Tensor weibull_reparam(const WeibullParams& q, const Tensor& eps) {
  q.validate();
  if (eps.shape() != q.k.shape()) {
    throw DimensionError("eps " + shape_str(eps.shape()) + " vs params " + shape_str(q.k.shape()));
  }
  require_open_unit(eps);
  const Tensor log_u = log(exp_quantile(eps));
  return mul(q.lam, exp(mul(reciprocal(q.k), log_u)));
}

Tensor weibull_log_reparam(const Tensor& k, const Tensor& log_lam, const Tensor& eps) {
  if (eps.shape() != k.shape() || log_lam.shape() != k.shape()) {
    throw DimensionError("weibull_log_reparam: shapes " + shape_str(k.shape()) + ", " +
                         shape_str(log_lam.shape()) + ", " + shape_str(eps.shape()));
  }
  require_open_unit(eps);
  const Tensor log_u = log(exp_quantile(eps));
  return add(log_lam, mul(reciprocal(k), log_u));
}

Tensor weibull_mean(const WeibullParams& q) {
  q.validate();
  return mul(q.lam, exp(lgamma(add_scalar(reciprocal(q.k), 1.0))));
}

Tensor kl_weibull_gamma_log(const Tensor& k, const Tensor& log_lam, const Tensor& alpha,
                            double beta) {
  if (!(beta > 0.0)) throw DomainError("Gamma rate beta must be positive");
  constexpr double g = special::kEulerGamma;
  // g*alpha/k - alpha*log(lam) + log(k) + beta*lam*Gamma(1+1/k)
  //   - g - 1 - alpha*log(beta) + lgamma(alpha)
  const Tensor inv_k = reciprocal(k);
  Tensor r = scale(mul(inv_k, alpha), g);
  r = sub(r, mul(log_lam, alpha));
  r = add(r, log(k));
  r = add(r, scale(exp(add(log_lam, lgamma(add_scalar(inv_k, 1.0)))), beta));
  r = add_scalar(r, -g - 1.0);
  if (beta != 1.0) r = sub(r, scale(alpha, std::log(beta)));
  return add(r, lgamma(alpha));
}

Tensor kl_weibull_gamma(const WeibullParams& q, const GammaParams& p) {
  q.validate();
  p.validate();
  return kl_weibull_gamma_log(q.k, log(q.lam), p.alpha, p.beta);
}

Tensor weibull_log_pdf(const Tensor& s, const WeibullParams& q) {
  q.validate();
  require_positive(s, "Weibull support point s");
  // log k - k log lam + (k - 1) log s - (s / lam)^k
  const Tensor log_s = log(s);
  const Tensor log_ratio = sub(log_s, log(q.lam));
  Tensor r = log(q.k);
  r = sub(r, log(q.lam));
  r = add(r, mul(add_scalar(q.k, -1.0), log_ratio));
  return sub(r, exp(mul(q.k, log_ratio)));
}

Tensor gamma_log_pdf(const Tensor& s, const GammaParams& p) {
  p.validate();
  require_positive(s, "Gamma support point s");
  // alpha log beta - lgamma(alpha) + (alpha - 1) log s - beta s, alpha broadcasts into s
  Tensor r = mul(log(s), add_scalar(p.alpha, -1.0));
  r = sub(r, scale(s, p.beta));
  r = sub(r, lgamma(p.alpha));
  return add(r, scale(p.alpha, std::log(p.beta)));
}

double sample_gamma(double alpha, double beta, RngStream& rng) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("sample_gamma needs alpha, beta > 0");
  if (alpha < 1.0) {
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    const double g = sample_gamma(alpha + 1.0, 1.0, rng);
    return g * std::pow(rng.uniform_open(), 1.0 / alpha) / beta;
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / beta;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / beta;
  }
}

Tensor sample_gamma(const GammaParams& p, RngStream& rng) {
  p.validate();
  std::vector<double> out(p.alpha.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sample_gamma(p.alpha[i], p.beta, rng);
  return Tensor::from(p.alpha.shape(), std::move(out));
}

McEstimate kl_mc_oracle(double k, double lam, double alpha, double beta, std::size_t n,
                        RngStream& rng) {
  if (!(k > 0 && lam > 0 && alpha > 0 && beta > 0)) {
    throw DomainError("kl_mc_oracle needs positive parameters");
  }
  if (n < 2) throw ParameterError("kl_mc_oracle needs n >= 2");
  const double log_lam = std::log(lam);
  const double log_k = std::log(k);
  const double log_norm_p = alpha * std::log(beta) - special::lgamma(alpha);
  // Welford accumulation of the log-ratio
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double u = -std::log1p(-rng.uniform_open());
    const double log_s = log_lam + std::log(u) / k;
    // (s/lam)^k == u exactly under the reparameterization
    const double log_q = log_k - log_lam + (k - 1.0) * (log_s - log_lam) - u;
    const double log_p = log_norm_p + (alpha - 1.0) * log_s - beta * std::exp(log_s);
    const double x = log_q - log_p;
    const double delta = x - mean;
    mean += delta / static_cast<double>(i);
    m2 += delta * (x - mean);
  }
  const double var = m2 / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

std::vector<McEstimate> kl_mc_oracle(const WeibullParams& q, const GammaParams& p, std::size_t n,
                                     RngStream& rng) {
  q.validate();
  p.validate();
  if (p.alpha.shape() != q.k.shape()) {
    throw DimensionError("kl_mc_oracle: alpha " + shape_str(p.alpha.shape()) + " vs k " +
                         shape_str(q.k.shape()));
  }
  std::vector<McEstimate> out;
  out.reserve(q.k.size());
  for (std::size_t i = 0; i < q.k.size(); ++i) {
    RngStream child = rng.split(i);
    out.push_back(kl_mc_oracle(q.k[i], q.lam[i], p.alpha[i], p.beta, n, child));
  }
  return out;
}

}  // namespace babn
