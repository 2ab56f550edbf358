// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "babn/tensor.hpp"

namespace babn {

/// Fixed-length token sequences with either one label per sequence
/// (classification) or one label per position (tagging).
struct Dataset {
  std::size_t seq_len = 0;
  std::size_t num_classes = 0;
  bool tagging = false;
  std::vector<int> tokens;  // size() * seq_len
  std::vector<int> labels;  // size() or size() * seq_len
  /// Std of Gaussian noise added to embedded features at the model input;
  /// drawn per example from (noise_seed, example index).
  double feature_noise_std = 0.0;
  std::uint64_t noise_seed = 0;

  std::size_t size() const { return seq_len == 0 ? 0 : tokens.size() / seq_len; }
  std::span<const int> example(std::size_t i) const {
    return std::span<const int>(tokens).subspan(i * seq_len, seq_len);
  }
  std::size_t labels_per_example() const { return tagging ? seq_len : 1; }
};

struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<int> tokens;  // size * seq_len
  std::vector<int> labels;
  /// Optional [size x seq_len x d_model] perturbation of embedded features.
  Tensor input_noise;
};

/// Gathers `indices` into a batch; draws input noise when the dataset has
/// feature noise (needs the model width).
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, std::size_t d_model);

}  // namespace babn
