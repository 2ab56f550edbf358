// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "babn/error.hpp"
#include "babn/special.hpp"

namespace babn {
namespace {

void require_nonempty(const std::vector<PredictionRecord>& r, const char* what) {
  if (r.empty()) throw ParameterError(std::string(what) + ": empty record set");
}

void check_probs(const std::vector<double>& p) {
  if (p.empty()) throw InputError("prediction record: empty probability vector");
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw InputError("prediction record: negative probability");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) {
    throw InputError("prediction record: probabilities sum to " + std::to_string(s));
  }
}

// Continued fraction for the regularized incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 500; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    c = 1.0 + num / c;
    d = 1.0 / (std::abs(d) < tiny ? tiny : d);
    c = std::abs(c) < tiny ? tiny : c;
    f *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    c = 1.0 + num / c;
    d = 1.0 / (std::abs(d) < tiny ? tiny : d);
    c = std::abs(c) < tiny ? tiny : c;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return f;
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = special::lgamma(a + b) - special::lgamma(a) - special::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * beta_cf(a, b, x) / a;
  return 1.0 - std::exp(log_front) * beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace

int PredictionRecord::predicted() const {
  return static_cast<int>(std::max_element(mean_probs.begin(), mean_probs.end()) -
                          mean_probs.begin());
}

double PredictionRecord::confidence() const {
  return *std::max_element(mean_probs.begin(), mean_probs.end());
}

void PredictionRecord::validate() const {
  check_probs(mean_probs);
  for (const auto& s : samples) {
    if (s.size() != mean_probs.size()) throw InputError("prediction record: sample width differs");
    check_probs(s);
  }
  if (label < 0 || static_cast<std::size_t>(label) >= mean_probs.size()) {
    throw InputError("prediction record: label out of range");
  }
}

std::size_t confidence_bin(double c, std::size_t n_bins) {
  if (n_bins == 0) throw ParameterError("n_bins must be >= 1");
  if (!(c >= 0.0 && c <= 1.0)) throw DomainError("confidence outside [0, 1]");
  const double n = static_cast<double>(n_bins);
  std::size_t i = c <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(c * n)) - 1;
  i = std::min(i, n_bins - 1);
  // settle rounding so that c lies in ((i)/n, (i+1)/n]
  while (i > 0 && c <= static_cast<double>(i) / n) --i;
  while (i + 1 < n_bins && c > static_cast<double>(i + 1) / n) ++i;
  return i;
}

std::vector<ReliabilityBin> confidence_histogram(const std::vector<PredictionRecord>& records,
                                                 std::size_t n_bins) {
  require_nonempty(records, "confidence_histogram");
  if (n_bins == 0) throw ParameterError("n_bins must be >= 1");
  std::vector<ReliabilityBin> bins(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), correct(n_bins, 0.0);
  for (std::size_t i = 0; i < n_bins; ++i) {
    bins[i].lo = static_cast<double>(i) / n_bins;
    bins[i].hi = static_cast<double>(i + 1) / n_bins;
  }
  for (const PredictionRecord& r : records) {
    const double c = r.confidence();
    const std::size_t b = confidence_bin(c, n_bins);
    ++bins[b].count;
    conf_sum[b] += c;
    correct[b] += r.correct() ? 1.0 : 0.0;
  }
  for (std::size_t i = 0; i < n_bins; ++i) {
    if (bins[i].count == 0) continue;
    bins[i].accuracy = correct[i] / bins[i].count;
    bins[i].confidence = conf_sum[i] / bins[i].count;
  }
  return bins;
}

EceResult ece(const std::vector<PredictionRecord>& records, std::size_t n_bins) {
  require_nonempty(records, "ece");
  EceResult r;
  r.bins = confidence_histogram(records, n_bins);
  const double n = static_cast<double>(records.size());
  for (const ReliabilityBin& b : r.bins) {
    if (b.count) r.ece += (b.count / n) * std::abs(b.accuracy - b.confidence);
  }
  return r;
}

double accuracy(const std::vector<PredictionRecord>& records) {
  require_nonempty(records, "accuracy");
  std::size_t c = 0;
  for (const PredictionRecord& r : records) c += r.correct();
  return static_cast<double>(c) / records.size();
}

double student_t_sf(double t, double dof) {
  if (!(dof > 0.0)) throw ParameterError("student_t_sf: dof must be positive");
  if (std::isnan(t)) throw DomainError("student_t_sf: t is NaN");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? tail : 1.0 - tail;
}

bool margin_certain(const PredictionRecord& r, double p_threshold) {
  const std::size_t m = r.samples.size();
  if (m < 2) throw ParameterError("margin test needs at least 2 samples");
  if (r.mean_probs.size() < 2) return true;
  // top class and runner-up by posterior mean
  std::size_t top = 0, second = 1;
  if (r.mean_probs[1] > r.mean_probs[0]) std::swap(top, second);
  for (std::size_t c = 2; c < r.mean_probs.size(); ++c) {
    if (r.mean_probs[c] > r.mean_probs[top]) {
      second = top;
      top = c;
    } else if (r.mean_probs[c] > r.mean_probs[second]) {
      second = c;
    }
  }
  double mean = 0.0;
  for (const auto& s : r.samples) mean += s[top] - s[second];
  mean /= m;
  double var = 0.0;
  for (const auto& s : r.samples) var += std::pow(s[top] - s[second] - mean, 2);
  var /= (m - 1);
  if (var <= 0.0) return mean > 0.0;
  const double t = mean / std::sqrt(var / m);
  return student_t_sf(t, static_cast<double>(m - 1)) < p_threshold;
}

namespace {

PavpuResult tally(const std::vector<PredictionRecord>& records, auto certain) {
  PavpuResult res;
  for (const PredictionRecord& r : records) {
    const bool acc = r.correct();
    const bool cer = certain(r);
    if (acc && cer) ++res.cells.accurate_certain;
    else if (acc) ++res.cells.accurate_uncertain;
    else if (cer) ++res.cells.inaccurate_certain;
    else ++res.cells.inaccurate_uncertain;
  }
  res.pavpu = static_cast<double>(res.cells.accurate_certain + res.cells.inaccurate_uncertain) /
              res.cells.total();
  return res;
}

}  // namespace

PavpuResult pavpu(const std::vector<PredictionRecord>& records, double p_threshold) {
  require_nonempty(records, "pavpu");
  return tally(records, [&](const PredictionRecord& r) { return margin_certain(r, p_threshold); });
}

PavpuResult pavpu_confidence(const std::vector<PredictionRecord>& records,
                             double confidence_threshold) {
  require_nonempty(records, "pavpu");
  return tally(records,
               [&](const PredictionRecord& r) { return r.confidence() >= confidence_threshold; });
}

}  // namespace babn
