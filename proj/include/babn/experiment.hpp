// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Config-driven experiment runner: task generation, training, evaluation of
// every split in posterior-mean mode, calibration metrics and report files.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "babn/babn_net.hpp"
#include "babn/metrics.hpp"
#include "babn/tasks.hpp"
#include "babn/train.hpp"

namespace babn {

inline constexpr int kConfigVersion = 1;
inline constexpr int kReportVersion = 1;

struct ModelSpec {
  ModelKind kind = ModelKind::kDeterministic;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ffn_hidden = 128;
  BabnConstants constants;
  /// Deterministic checkpoint to convert and finetune (BABN only).
  std::optional<std::string> init_from;
};

struct MetricSpec {
  std::size_t ece_bins = 10;
  std::size_t pavpu_samples = 20;
  double p_threshold = 0.05;
  /// Certainty cutoff on the top-class probability for the deterministic baseline.
  double confidence_threshold = 0.95;
  std::size_t stats_samples = 20;
  /// Cap on test examples per split (0 = all).
  std::size_t eval_limit = 0;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  TaskSpec task;
  ModelSpec model;
  TrainConfig train;
  MetricSpec metrics;
  std::string output_dir = "runs/out";

  AttentionConfig attention_config() const;
};

/// Strict parse: unknown keys, wrong types and out-of-range values throw
/// ConfigError naming the field path. Relative init_from paths resolve
/// against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON form of a parsed config (every field, defaults filled in).
std::string config_to_json(const ExperimentConfig& cfg);

/// Builds the model the config describes: fresh init, or conversion of
/// model.init_from when given.
Model build_model(const ExperimentConfig& cfg);

/// Per-label prediction records: posterior-mean probabilities and, for
/// `samples` > 0 on a BABN model, that many sampled forwards. Sample m of
/// batch b uses rng.split(m).split(b).
std::vector<PredictionRecord> collect_records(const Model& model, const Dataset& data,
                                              std::size_t samples, const RngStream& rng,
                                              std::size_t limit = 0, std::size_t batch_size = 256);

/// Like collect_records, but mean_probs is the average of the sampled
/// probability vectors instead of the posterior-mean forward.
std::vector<PredictionRecord> collect_sampled_records(const Model& model, const Dataset& data,
                                                      std::size_t samples, const RngStream& rng,
                                                      std::size_t limit = 0,
                                                      std::size_t batch_size = 256);

struct SplitReport {
  std::string name;
  std::size_t count = 0;
  double accuracy = 0.0;
  double nll = 0.0;
  EceResult ece;
  /// Margin t-test over posterior samples (BABN only).
  std::optional<PavpuResult> pavpu_test;
  /// Confidence-threshold certainty; the deterministic baseline's PAvPU.
  PavpuResult pavpu_confidence;
  /// pavpu_test for BABN models, pavpu_confidence otherwise.
  double pavpu = 0.0;
};

SplitReport evaluate_split(const std::string& name, const std::vector<PredictionRecord>& records,
                           const MetricSpec& metrics);

struct ExperimentResult {
  Model model;
  TrainHistory history;
  std::vector<SplitReport> splits;
  const SplitReport& split(const std::string& name) const;
};

/// Runs the whole experiment and writes into `out_dir`:
///   model.ckpt.json, summary.json, history.csv, evals.csv,
///   reliability.csv, pavpu.csv, attention_stats.csv.
/// Reruns with an identical config produce byte-identical files.
/// Divergence writes history.csv and summary.json, then throws DivergenceError.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Named evaluation splits of a task (empty ones omitted).
std::vector<std::pair<std::string, const Dataset*>> eval_splits(const TaskSplits& splits);

/// layer,head,query,key,mean,std_over_mean
std::string attention_stats_csv(const AttentionStats& stats);
std::string reliability_csv(const std::vector<SplitReport>& splits);
std::string pavpu_csv(const std::vector<SplitReport>& splits);

}  // namespace babn
