// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/data.hpp"

#include "babn/error.hpp"
#include "babn/rng.hpp"

namespace babn {

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, std::size_t d_model) {
  Batch b;
  b.size = indices.size();
  b.seq_len = data.seq_len;
  const std::size_t per = data.labels_per_example();
  b.tokens.reserve(b.size * data.seq_len);
  b.labels.reserve(b.size * per);
  for (std::size_t i : indices) {
    if (i >= data.size()) {
      throw InputError("example index " + std::to_string(i) + " out of range " +
                       std::to_string(data.size()));
    }
    const auto ex = data.example(i);
    b.tokens.insert(b.tokens.end(), ex.begin(), ex.end());
    b.labels.insert(b.labels.end(), data.labels.begin() + i * per,
                    data.labels.begin() + (i + 1) * per);
  }
  if (data.feature_noise_std > 0.0) {
    const std::size_t per_noise = data.seq_len * d_model;
    std::vector<double> noise(b.size * per_noise);
    const RngStream root(data.noise_seed);
    for (std::size_t r = 0; r < b.size; ++r) {
      RngStream s = root.split(indices[r]);
      for (std::size_t j = 0; j < per_noise; ++j) {
        noise[r * per_noise + j] = data.feature_noise_std * s.normal();
      }
    }
    b.input_noise = Tensor::from({b.size, data.seq_len, d_model}, std::move(noise));
  }
  return b;
}

}  // namespace babn
