// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic benchmark tasks and the greedy substitution attack.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "babn/babn_net.hpp"
#include "babn/data.hpp"
#include "babn/rng.hpp"

namespace babn {

enum class TaskKind { kCopy, kRetrieval, kClusters };
enum class CopyMode { kIdentity, kReverse };

struct TaskSpec {
  TaskKind kind = TaskKind::kCopy;
  std::size_t vocab_size = 16;
  /// Copy and clusters: sequence length. Retrieval derives it from n_pairs.
  std::size_t seq_len = 10;
  std::size_t n_train = 20000;
  std::size_t n_val = 1000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;

  CopyMode copy_mode = CopyMode::kReverse;
  /// Retrieval: key/value pairs per sequence.
  std::size_t n_pairs = 4;
  /// Clusters: classes, spread of the class token logits, and the test shifts.
  std::size_t n_classes = 4;
  double separation = 1.0;
  double shift = 0.0;
  double noise = 0.0;

  void validate() const;
  /// Sequence length seen by the model.
  std::size_t model_seq_len() const;
  std::size_t model_classes() const;
  bool tagging() const { return kind == TaskKind::kCopy; }
};

/// Splits generated from disjoint child streams of RngStream(spec.seed).
/// Only clusters fills test_od and test_noisy.
struct TaskSplits {
  Dataset train, val, test_id, test_od, test_noisy;
};

/// Random tokens; targets are the same tokens, in order or reversed.
Dataset gen_copy_task(const TaskSpec& spec, std::size_t n, RngStream& rng);

/// k1 v1 k2 v2 ... q: keys are distinct ids from the lower half of the
/// vocabulary, values come from the upper half, q repeats one key. The
/// label is the index of that key's value within the upper half.
Dataset gen_retrieval_task(const TaskSpec& spec, std::size_t n, RngStream& rng);

/// Class-conditional categorical token model.
struct ClusterModel {
  std::vector<double> class_prior;            // [C]
  std::vector<std::vector<double>> token_probs;  // [C][V]

  /// Class posterior for one sequence under this model.
  std::vector<double> posterior(std::span<const int> tokens) const;
  /// Accuracy of the Bayes classifier for `*this` on `data`.
  double bayes_accuracy(const Dataset& data) const;
};

struct ClusterTask {
  ClusterModel train_model;
  ClusterModel shifted_model;
  TaskSplits splits;
};

/// Train/val/test_id from the base model; test_od from class logits moved by
/// `shift` along a random direction; test_noisy is test_id with Gaussian
/// noise of std `noise` added to the embedded features.
ClusterTask gen_clusters_task(const TaskSpec& spec, RngStream& rng);

/// Dispatches on spec.kind with rng = RngStream(spec.seed).
TaskSplits make_task(const TaskSpec& spec);

struct AttackSpec {
  std::size_t budget = 1;
  std::size_t pool_size = 8;
  std::uint64_t seed = 0;
};

struct AttackResult {
  std::size_t attempts = 0;
  std::size_t failures = 0;
  double failure_rate = 1.0;
  std::size_t max_substitutions = 0;
};

/// Greedy substitution against posterior-mean predictions of a classifier.
AttackResult toy_attack(const Model& model, const Dataset& data, const AttackSpec& attack,
                        std::size_t limit = 0);

const char* to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

}  // namespace babn
