// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "babn/tensor.hpp"

namespace babn {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

struct GradcheckOptions {
  double step = 1e-5;
  /// Denominator floor: err = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  /// When nonzero, check a seeded random subset of this many coordinates per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of a scalar `loss` against central
/// differences over every coordinate of `params`. `loss` must be a
/// deterministic function of the parameter values.
GradcheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                          const GradcheckOptions& opts = {});

}  // namespace babn
