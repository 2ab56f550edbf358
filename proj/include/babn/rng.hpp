// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

namespace babn {

/// Counter-based random stream (Philox4x32-10 keyed by a 64-bit seed).
///
/// The n-th draw is a pure function of (seed, n), so a stream is reproducible
/// bit-for-bit and child streams derived with split() never share state with
/// their parent. Streams are single-owner; derive one per parallel worker.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {}

  /// Independent child stream identified by `key`. Does not advance this stream.
  RngStream split(std::uint64_t key) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on the open interval (0, 1).
  double uniform_open();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> block_{};
  int used_ = 2;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// SplitMix64 finalizer; exposed for deriving seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace babn
