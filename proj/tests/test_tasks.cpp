// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>

#include "babn/error.hpp"
#include "babn/tasks.hpp"
#include "doctest.h"

using namespace babn;

namespace {

// value paired with the query key, read straight off the token layout
int lookup(std::span<const int> ex, std::size_t n_pairs, int half) {
  const int q = ex[2 * n_pairs];
  for (std::size_t k = 0; k < n_pairs; ++k) {
    if (ex[2 * k] == q) return ex[2 * k + 1] - half;
  }
  return -1;
}

AttentionConfig classify_config(std::size_t vocab, std::size_t seq, std::size_t classes) {
  AttentionConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ffn_hidden = 16;
  c.vocab_size = vocab;
  c.max_seq_len = seq;
  c.n_classes = classes;
  c.output = OutputKind::kClassify;
  return c;
}

}  // namespace

TEST_CASE("copy task: single token and the copying oracle") {
  TaskSpec s;
  s.seq_len = 1;
  for (CopyMode m : {CopyMode::kIdentity, CopyMode::kReverse}) {
    s.copy_mode = m;
    RngStream rng(1);
    const Dataset d = gen_copy_task(s, 50, rng);
    CHECK(d.tokens == d.labels);
  }

  s.seq_len = 10;
  RngStream rng(2);
  const Dataset d = gen_copy_task(s, 500, rng);
  REQUIRE(d.tagging);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto ex = d.example(i);
    for (std::size_t t = 0; t < 10; ++t) hits += d.labels[i * 10 + t] == ex[9 - t];
  }
  CHECK(hits == d.labels.size());
}

TEST_CASE("copy task: majority-class baseline sits at chance") {
  TaskSpec s;
  RngStream rng(3);
  const Dataset d = gen_copy_task(s, 20000, rng);
  std::map<int, std::size_t> freq;
  for (int y : d.labels) ++freq[y];
  std::size_t top = 0;
  for (const auto& [y, n] : freq) top = std::max(top, n);
  const double acc = static_cast<double>(top) / d.labels.size();
  // 200k labels: se of one class frequency ~ 5.4e-4, max of 16 stays within 4 se
  CHECK(std::abs(acc - 1.0 / 16) < 4 * std::sqrt(1.0 / 16 * 15.0 / 16 / d.labels.size()));
}

TEST_CASE("retrieval task: labels, one pair, blind chance, pair shuffling") {
  TaskSpec s;
  s.kind = TaskKind::kRetrieval;
  s.n_pairs = 1;
  RngStream r1(4);
  const Dataset one = gen_retrieval_task(s, 100, r1);
  CHECK(one.seq_len == 3);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one.labels[i] == one.example(i)[1] - 8);
  }

  s.n_pairs = 4;
  RngStream r2(5);
  const Dataset d = gen_retrieval_task(s, 20000, r2);
  CHECK(d.seq_len == 9);
  CHECK(d.num_classes == 8);
  std::size_t blind = 0;
  RngStream perm(6);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto ex = d.example(i);
    REQUIRE(lookup(ex, 4, 8) == d.labels[i]);
    // keys distinct and in the lower half, values in the upper half
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(ex[2 * k] < 8);
      CHECK(ex[2 * k + 1] >= 8);
      for (std::size_t j = k + 1; j < 4; ++j) CHECK(ex[2 * k] != ex[2 * j]);
    }
    blind += ex[1] - 8 == d.labels[i];
    std::vector<int> shuffled(ex.begin(), ex.end());
    for (std::size_t k = 3; k > 0; --k) {
      const std::size_t j = perm.below(k + 1);
      std::swap(shuffled[2 * k], shuffled[2 * j]);
      std::swap(shuffled[2 * k + 1], shuffled[2 * j + 1]);
    }
    CHECK(lookup(shuffled, 4, 8) == d.labels[i]);
  }
  // always answering the first pair's value: right when the first key is
  // queried, or by a value collision otherwise
  const double expect = 0.25 + 0.75 / 8.0;
  const double acc = static_cast<double>(blind) / d.size();
  CHECK(std::abs(acc - expect) < 3 * std::sqrt(expect * (1 - expect) / d.size()));
}

TEST_CASE("clusters: shift 0 leaves test_od on the training distribution") {
  TaskSpec s;
  s.kind = TaskKind::kClusters;
  s.n_test = 4000;
  s.seed = 7;
  RngStream rng(7);
  const ClusterTask t = gen_clusters_task(s, rng);
  CHECK(t.train_model.token_probs == t.shifted_model.token_probs);
  auto mean_sd = [](const Dataset& d) {
    double m = 0.0, m2 = 0.0;
    for (int v : d.tokens) {
      m += v;
      m2 += double(v) * v;
    }
    const double n = static_cast<double>(d.tokens.size());
    m /= n;
    return std::pair{m, std::sqrt((m2 / n - m * m) / n)};
  };
  const auto [a, sa] = mean_sd(t.splits.test_id);
  const auto [b, sb] = mean_sd(t.splits.test_od);
  CHECK(std::abs(a - b) < 3 * std::hypot(sa, sb));
}

TEST_CASE("clusters: zero noise gives a bit-identical noisy split") {
  TaskSpec s;
  s.kind = TaskKind::kClusters;
  s.noise = 0.0;
  const TaskSplits sp = make_task(s);
  CHECK(sp.test_noisy.tokens == sp.test_id.tokens);
  CHECK(sp.test_noisy.labels == sp.test_id.labels);
  const std::size_t idx[] = {0, 1, 2};
  CHECK_FALSE(make_batch(sp.test_noisy, idx, 8).input_noise.defined());

  s.noise = 0.5;
  const TaskSplits noisy = make_task(s);
  const Batch b = make_batch(noisy.test_noisy, idx, 8);
  REQUIRE(b.input_noise.defined());
  CHECK(b.input_noise.shape() == Shape{3, 10, 8});
}

TEST_CASE("clusters: Bayes classifier of the training model degrades under shift") {
  TaskSpec s;
  s.kind = TaskKind::kClusters;
  s.shift = 1.5;
  s.n_test = 4000;
  RngStream rng(8);
  const ClusterTask t = gen_clusters_task(s, rng);
  const double id = t.train_model.bayes_accuracy(t.splits.test_id);
  const double od = t.train_model.bayes_accuracy(t.splits.test_od);
  CHECK(od < id);
  // the shifted model is the Bayes rule on its own split
  CHECK(t.shifted_model.bayes_accuracy(t.splits.test_od) >= od);
}

TEST_CASE("datasets regenerate bit-exactly and splits differ") {
  for (TaskKind k : {TaskKind::kCopy, TaskKind::kRetrieval, TaskKind::kClusters}) {
    TaskSpec s;
    s.kind = k;
    s.n_train = 500;
    s.shift = 0.5;
    s.noise = 0.3;
    s.seed = 11;
    const TaskSplits a = make_task(s), b = make_task(s);
    CHECK(a.train.tokens == b.train.tokens);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test_id.tokens == b.test_id.tokens);
    CHECK(a.test_od.tokens == b.test_od.tokens);
    CHECK(a.test_noisy.noise_seed == b.test_noisy.noise_seed);
    CHECK(a.train.tokens != a.val.tokens);
    s.seed = 12;
    CHECK(make_task(s).train.tokens != a.train.tokens);
  }
}

TEST_CASE("task spec validation") {
  TaskSpec s;
  s.vocab_size = 1;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = TaskSpec{};
  s.kind = TaskKind::kRetrieval;
  s.n_pairs = 9;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = TaskSpec{};
  s.kind = TaskKind::kClusters;
  s.shift = -1.0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  CHECK_THROWS_AS(task_kind_from_string("sort"), InputError);
}

TEST_CASE("toy attack: budget 0, constant model, determinism, budget bound") {
  TaskSpec s;
  s.kind = TaskKind::kClusters;
  s.n_test = 60;
  const TaskSplits sp = make_task(s);
  const AttentionConfig cfg = classify_config(16, 10, 4);
  RngStream rng(9);
  Model m = Model::init(cfg, ModelKind::kDeterministic, {}, rng);

  AttackSpec a;
  a.budget = 0;
  CHECK(toy_attack(m, sp.test_id, a).failure_rate == 1.0);

  a.budget = 3;
  a.seed = 5;
  const AttackResult r1 = toy_attack(m, sp.test_id, a);
  const AttackResult r2 = toy_attack(m, sp.test_id, a);
  CHECK(r1.attempts == r2.attempts);
  CHECK(r1.failures == r2.failures);
  CHECK(r1.failure_rate == r2.failure_rate);
  CHECK(r1.max_substitutions <= 3);
  CHECK(r1.attempts > 0);

  // constant output: zero head weights, a bias that always picks class 0
  Model c = m.clone();
  Tensor hw = c.base().head_w, hbt = c.base().head_b;  // handles share storage
  for (double& v : hw.mutable_data()) v = 0.0;
  auto hb = hbt.mutable_data();
  std::fill(hb.begin(), hb.end(), 0.0);
  hb[0] = 5.0;
  const AttackResult rc = toy_attack(c, sp.test_id, a);
  CHECK(rc.attempts > 0);
  CHECK(rc.failure_rate == 1.0);

  TaskSpec copy;
  const TaskSplits cs = make_task(copy);
  CHECK_THROWS_AS(toy_attack(m, cs.test_id, a), ParameterError);
}
