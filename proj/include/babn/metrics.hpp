// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Accuracy, expected calibration error and PAvPU.

#pragma once

#include <cstddef>
#include <vector>

namespace babn {

/// One labelled prediction: the posterior-mean class distribution and,
/// optionally, M sampled distributions.
struct PredictionRecord {
  int label = 0;
  std::vector<double> mean_probs;
  std::vector<std::vector<double>> samples;

  int predicted() const;
  double confidence() const;
  bool correct() const { return predicted() == label; }
  /// Probability vectors nonnegative and summing to 1 within 1e-6.
  void validate() const;
};

struct ReliabilityBin {
  double lo = 0.0, hi = 0.0;  // (lo, hi]; the first bin also holds 0
  std::size_t count = 0;
  double accuracy = 0.0;    // 0 when empty
  double confidence = 0.0;  // mean confidence, 0 when empty
};

struct EceResult {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

/// Equal-width, right-closed bins on confidence.
std::size_t confidence_bin(double confidence, std::size_t n_bins);
std::vector<ReliabilityBin> confidence_histogram(const std::vector<PredictionRecord>& records,
                                                 std::size_t n_bins = 10);
EceResult ece(const std::vector<PredictionRecord>& records, std::size_t n_bins = 10);
double accuracy(const std::vector<PredictionRecord>& records);

struct PavpuCells {
  std::size_t accurate_certain = 0;
  std::size_t accurate_uncertain = 0;
  std::size_t inaccurate_certain = 0;
  std::size_t inaccurate_uncertain = 0;

  std::size_t total() const {
    return accurate_certain + accurate_uncertain + inaccurate_certain + inaccurate_uncertain;
  }
};

struct PavpuResult {
  double pavpu = 0.0;
  PavpuCells cells;
};

/// Upper tail P(T > t) of Student's t with `dof` degrees of freedom.
double student_t_sf(double t, double dof);

/// Margin test: per sample, p(top) - p(runner-up) with both classes fixed by
/// the posterior mean; certain iff a one-sided t-test of mean margin > 0 gives
/// p < p_threshold. Zero-variance positive margins are certain.
bool margin_certain(const PredictionRecord& record, double p_threshold);

/// PAvPU = (n_ac + n_iu) / N with certainty from margin_certain (needs M >= 2).
PavpuResult pavpu(const std::vector<PredictionRecord>& records, double p_threshold = 0.05);

/// PAvPU for models without samples: certain iff confidence >= threshold.
PavpuResult pavpu_confidence(const std::vector<PredictionRecord>& records,
                             double confidence_threshold);

struct CalibrationReport {
  double accuracy = 0.0;
  EceResult ece;
  PavpuResult pavpu;
};

}  // namespace babn
