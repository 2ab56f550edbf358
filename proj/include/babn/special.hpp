// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace babn::special {

inline constexpr double kEulerGamma = 0.57721566490153286060651209008240243;
inline constexpr double kPi = 3.14159265358979323846264338327950288;

/// log Gamma(x) for x > 0. Lanczos (g = 7, 9 terms) with reflection below 0.5.
double lgamma(double x);
/// psi(x) for x > 0: recurrence up to x >= 6, then the asymptotic series.
double digamma(double x);
/// psi'(x) for x > 0.
double trigamma(double x);

}  // namespace babn::special
