// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "babn/rng.hpp"

namespace babn {

GradcheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                          const GradcheckOptions& opts) {
  for (auto& p : params) p.zero_grad();
  const Tensor root = loss();
  if (!std::isfinite(root.item())) throw NumericalError("gradcheck: loss is not finite");
  root.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  auto eval = [&] {
    NoGradGuard guard;
    const double v = loss().item();
    if (!std::isfinite(v)) throw NumericalError("gradcheck: perturbed loss is not finite");
    return v;
  };

  RngStream rng(opts.seed);
  GradcheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords_per_param > 0 && coords.size() > opts.max_coords_per_param) {
      for (std::size_t i = 0; i < opts.max_coords_per_param; ++i) {
        const std::size_t j = i + rng.below(coords.size() - i);
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opts.max_coords_per_param);
    }
    auto data = p.mutable_data();
    for (std::size_t idx : coords) {
      const double orig = data[idx];
      data[idx] = orig + opts.step;
      const double fp = eval();
      data[idx] = orig - opts.step;
      const double fm = eval();
      data[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[pi][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double err = std::abs(a - numeric) / denom;
      ++res.coordinates;
      if (err > res.max_rel_error || res.coordinates == 1) {
        res.max_rel_error = err;
        res.worst_param = pi;
        res.worst_index = idx;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace babn
