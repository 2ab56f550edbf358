// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "babn/error.hpp"
#include "babn/metrics.hpp"
#include "babn/rng.hpp"
#include "babn/special.hpp"
#include "doctest.h"

using namespace babn;
using doctest::Approx;

namespace {

/// Two-class record with the given confidence on the predicted class.
PredictionRecord binary(double conf, bool correct) {
  PredictionRecord r;
  r.mean_probs = {conf, 1.0 - conf};
  r.label = correct ? 0 : 1;
  return r;
}

PredictionRecord with_samples(int label, std::vector<std::vector<double>> samples) {
  PredictionRecord r;
  r.label = label;
  r.samples = std::move(samples);
  r.mean_probs.assign(r.samples[0].size(), 0.0);
  for (const auto& s : r.samples)
    for (std::size_t c = 0; c < s.size(); ++c) r.mean_probs[c] += s[c] / r.samples.size();
  return r;
}

std::vector<PredictionRecord> random_records(RngStream& rng, std::size_t n) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = 0.5 + 0.5 * rng.uniform();
    out.push_back(binary(c, rng.uniform() < c));
  }
  return out;
}

}  // namespace

TEST_CASE("ECE examples") {
  std::vector<PredictionRecord> r;
  for (int i = 0; i < 10; ++i) r.push_back(binary(0.7, i < 7));
  CHECK(std::abs(ece(r, 10).ece) < 1e-12);

  r.clear();
  for (int i = 0; i < 5; ++i) r.push_back(binary(0.95, i < 4));
  for (int i = 0; i < 5; ++i) r.push_back(binary(0.55, i < 3));
  const EceResult e = ece(r, 10);
  CHECK(e.ece == Approx(0.5 * std::abs(0.8 - 0.95) + 0.5 * std::abs(0.6 - 0.55)).epsilon(1e-14));
  CHECK(std::abs(e.ece - 0.10) < 1e-12);
  CHECK(e.bins[9].count == 5);
  CHECK(e.bins[5].count == 5);

  r.clear();
  for (int i = 0; i < 4; ++i) r.push_back(binary(1.0, true));
  CHECK(ece(r).ece == 0.0);
  CHECK_THROWS_AS(ece({}), ParameterError);
  CHECK_THROWS_AS(ece(r, 0), ParameterError);
}

TEST_CASE("bin edges are right-closed") {
  CHECK(confidence_bin(1.0, 10) == 9);
  CHECK(confidence_bin(0.0, 10) == 0);
  CHECK(confidence_bin(0.1, 10) == 0);
  CHECK(confidence_bin(std::nextafter(0.1, 1.0), 10) == 1);
  CHECK(confidence_bin(0.7, 10) == 6);
  CHECK(confidence_bin(0.3, 10) == 2);
  CHECK(confidence_bin(0.5, 1) == 0);
  for (int i = 1; i <= 10; ++i) CHECK(confidence_bin(i / 10.0, 10) == static_cast<std::size_t>(i - 1));
  CHECK_THROWS_AS(confidence_bin(1.5, 10), DomainError);
}

TEST_CASE("ECE bounds, order invariance and merging") {
  RngStream rng(3);
  auto a = random_records(rng, 300);
  auto b = random_records(rng, 500);
  const double ea = ece(a).ece, eb = ece(b).ece;
  CHECK(ea >= 0.0);
  CHECK(ea <= 1.0);
  auto shuffled = a;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(ece(shuffled).ece == Approx(ea).epsilon(1e-12));

  auto merged = a;
  merged.insert(merged.end(), b.begin(), b.end());
  const EceResult em = ece(merged);
  // recompute the merged value from the two per-bin tables
  const auto ta = confidence_histogram(a), tb = confidence_histogram(b);
  double from_tables = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const double n = ta[i].count + tb[i].count;
    if (n == 0) continue;
    const double acc = (ta[i].accuracy * ta[i].count + tb[i].accuracy * tb[i].count) / n;
    const double conf = (ta[i].confidence * ta[i].count + tb[i].confidence * tb[i].count) / n;
    from_tables += n / merged.size() * std::abs(acc - conf);
  }
  CHECK(em.ece == Approx(from_tables).epsilon(1e-12));
  // the triangle inequality per bin bounds the merged value by the weighted sum
  CHECK(em.ece <= (300 * ea + 500 * eb) / 800 + 1e-12);
}

TEST_CASE("accuracy and histogram") {
  std::vector<PredictionRecord> r;
  for (int i = 0; i < 100; ++i) r.push_back(binary(0.8, true));
  CHECK(accuracy(r) == 1.0);
  r.clear();
  for (int i = 0; i < 100; ++i) r.push_back(binary(0.6 + 0.004 * i, i % 2 == 0));
  CHECK(accuracy(r) == 0.5);
  std::size_t total = 0;
  for (const auto& b : confidence_histogram(r)) total += b.count;
  CHECK(total == 100);
  CHECK_THROWS_AS(accuracy({}), ParameterError);
}

TEST_CASE("Student t upper tail") {
  for (double t : {-3.0, -0.5, 0.0, 0.3, 1.0, 4.0, 50.0}) {
    CHECK(student_t_sf(t, 1.0) == Approx(0.5 - std::atan(t) / special::kPi).epsilon(1e-12));
    CHECK(student_t_sf(t, 2.0) == Approx(0.5 - t / (2.0 * std::sqrt(2.0 + t * t))).epsilon(1e-12));
  }
  CHECK(student_t_sf(1.729133, 19.0) == Approx(0.05).epsilon(1e-5));
  CHECK(student_t_sf(2.093024, 19.0) == Approx(0.025).epsilon(1e-5));
  // large dof approaches the normal tail
  CHECK(student_t_sf(1.959964, 1e7) == Approx(0.025).epsilon(1e-5));
}

TEST_CASE("PAvPU examples") {
  const std::vector<double> sure = {0.9, 0.1};
  // accurate-certain: every sample agrees on class 0
  auto ac = with_samples(0, {{0.9, 0.1}, {0.8, 0.2}, {0.85, 0.15}});
  // accurate-uncertain: margin hovers around zero
  auto au = with_samples(0, {{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}});
  auto ic = with_samples(1, {{0.9, 0.1}, {0.8, 0.2}, {0.85, 0.15}});
  auto iu = with_samples(1, {{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}});
  CHECK(margin_certain(ac, 0.05));
  CHECK_FALSE(margin_certain(au, 0.05));
  const PavpuResult one_each = pavpu({ac, au, ic, iu});
  CHECK(one_each.pavpu == 0.5);
  CHECK(one_each.cells.accurate_certain == 1);
  CHECK(one_each.cells.accurate_uncertain == 1);
  CHECK(one_each.cells.inaccurate_certain == 1);
  CHECK(one_each.cells.inaccurate_uncertain == 1);
  CHECK(pavpu({ac, ac, ac}).pavpu == 1.0);

  auto same = with_samples(0, std::vector<std::vector<double>>(20, sure));
  CHECK(margin_certain(same, 0.05));
  CHECK(pavpu({same}).cells.accurate_certain == 1);

  auto single = with_samples(0, {sure});
  CHECK_THROWS_AS(pavpu({single}), ParameterError);
  CHECK_THROWS_AS(pavpu({}), ParameterError);
}

TEST_CASE("PAvPU bounds and monotone response") {
  RngStream rng(8);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 200; ++i) {
    std::vector<std::vector<double>> s;
    const double centre = rng.uniform();
    const double spread = 0.4 * rng.uniform();
    for (int m = 0; m < 20; ++m) {
      const double p = std::clamp(centre + spread * (rng.uniform() - 0.5), 0.0, 1.0);
      s.push_back({p, 1.0 - p});
    }
    recs.push_back(with_samples(static_cast<int>(rng.below(2)), s));
  }
  const PavpuResult r = pavpu(recs);
  CHECK(r.pavpu >= 0.0);
  CHECK(r.pavpu <= 1.0);
  CHECK(r.cells.total() == recs.size());
  // flipping an inaccurate-certain example to uncertain never lowers PAvPU
  for (auto& rec : recs) {
    if (!rec.correct() && margin_certain(rec, 0.05)) {
      const double before = pavpu(recs).pavpu;
      // mean_probs, and so the prediction, stay as they were
      for (auto& s : rec.samples) s = {0.5, 0.5};
      rec.samples[0] = {0.9, 0.1};
      rec.samples[1] = {0.1, 0.9};
      CHECK_FALSE(margin_certain(rec, 0.05));
      CHECK(pavpu(recs).pavpu >= before);
      break;
    }
  }
}

TEST_CASE("confidence-threshold PAvPU") {
  const std::vector<PredictionRecord> r = {binary(0.99, true), binary(0.6, true),
                                           binary(0.97, false), binary(0.55, false)};
  const PavpuResult p = pavpu_confidence(r, 0.95);
  CHECK(p.pavpu == 0.5);
  CHECK(p.cells.accurate_certain == 1);
  CHECK(p.cells.inaccurate_uncertain == 1);
}

TEST_CASE("record validation") {
  PredictionRecord r = binary(0.7, true);
  CHECK_NOTHROW(r.validate());
  r.mean_probs = {0.7, 0.4};
  CHECK_THROWS_AS(r.validate(), InputError);
  r.mean_probs = {1.1, -0.1};
  CHECK_THROWS_AS(r.validate(), InputError);
}
