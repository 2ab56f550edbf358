// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/special.hpp"

#include <array>
#include <cmath>
#include <string>

#include "babn/error.hpp"

namespace babn::special {
namespace {

constexpr double kLanczosG = 7.0;
constexpr std::array<double, 9> kLanczos = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

void require_positive(double x, const char* fn) {
  if (!(x > 0.0)) {
    throw DomainError(std::string(fn) + ": argument must be > 0, got " + std::to_string(x));
  }
}

}  // namespace

double lgamma(double x) {
  require_positive(x, "lgamma");
  if (x < 0.5) {
    // Gamma(x) Gamma(1-x) = pi / sin(pi x)
    return std::log(kPi / std::sin(kPi * x)) - lgamma(1.0 - x);
  }
  const double z = x - 1.0;
  double series = kLanczos[0];
  for (std::size_t i = 1; i < kLanczos.size(); ++i) {
    series += kLanczos[i] / (z + static_cast<double>(i));
  }
  const double t = z + kLanczosG + 0.5;
  return 0.5 * std::log(2.0 * kPi) + (z + 0.5) * std::log(t) - t + std::log(series);
}

double digamma(double x) {
  require_positive(x, "digamma");
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli tail: B_{2k} / (2k x^{2k}) for k = 1..7
  const double tail =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))));
  return acc + std::log(x) - 0.5 * inv - tail;
}

double trigamma(double x) {
  require_positive(x, "trigamma");
  double acc = 0.0;
  while (x < 6.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double tail =
      inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 -
                                       inv2 * (1.0 / 30 -
                                               inv2 * (1.0 / 42 -
                                                       inv2 * (1.0 / 30 -
                                                               inv2 * (5.0 / 66 -
                                                                       inv2 * (691.0 / 2730 -
                                                                               inv2 * 7.0 / 6))))))));
  return acc + tail;
}

}  // namespace babn::special
