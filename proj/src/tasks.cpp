// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "babn/error.hpp"

namespace babn {
namespace {

std::vector<double> softmax_row(std::vector<double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double& v : x) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : x) v /= s;
  return x;
}

int draw_categorical(const std::vector<double>& p, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size() - 1);
}

Dataset sample_clusters(const ClusterModel& m, const TaskSpec& spec, std::size_t n,
                        RngStream& rng) {
  Dataset d;
  d.seq_len = spec.seq_len;
  d.num_classes = spec.n_classes;
  d.tokens.reserve(n * spec.seq_len);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = draw_categorical(m.class_prior, rng);
    d.labels.push_back(c);
    for (std::size_t t = 0; t < spec.seq_len; ++t) {
      d.tokens.push_back(draw_categorical(m.token_probs[c], rng));
    }
  }
  return d;
}

}  // namespace

const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kRetrieval: return "retrieval";
    case TaskKind::kClusters: return "clusters";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::kCopy;
  if (s == "retrieval") return TaskKind::kRetrieval;
  if (s == "clusters") return TaskKind::kClusters;
  throw InputError("unknown task kind '" + s + "'");
}

void TaskSpec::validate() const {
  if (vocab_size < 2) throw ParameterError("task.vocab_size must be >= 2");
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw ParameterError("task split sizes must be positive");
  }
  if (kind != TaskKind::kRetrieval && seq_len == 0) {
    throw ParameterError("task.seq_len must be positive");
  }
  if (kind == TaskKind::kRetrieval) {
    if (n_pairs == 0) throw ParameterError("task.n_pairs must be positive");
    if (n_pairs > vocab_size / 2) {
      throw ParameterError("task.n_pairs must not exceed vocab_size / 2 (distinct keys)");
    }
  }
  if (kind == TaskKind::kClusters) {
    if (n_classes < 2) throw ParameterError("task.n_classes must be >= 2");
    if (!(shift >= 0.0)) throw ParameterError("task.shift must be >= 0");
    if (!(noise >= 0.0)) throw ParameterError("task.noise must be >= 0");
    if (!(separation > 0.0)) throw ParameterError("task.separation must be > 0");
  }
}

std::size_t TaskSpec::model_seq_len() const {
  return kind == TaskKind::kRetrieval ? 2 * n_pairs + 1 : seq_len;
}

std::size_t TaskSpec::model_classes() const {
  switch (kind) {
    case TaskKind::kCopy: return vocab_size;
    case TaskKind::kRetrieval: return vocab_size - vocab_size / 2;
    case TaskKind::kClusters: return n_classes;
  }
  return 0;
}

Dataset gen_copy_task(const TaskSpec& spec, std::size_t n, RngStream& rng) {
  spec.validate();
  Dataset d;
  d.seq_len = spec.seq_len;
  d.num_classes = spec.vocab_size;
  d.tagging = true;
  d.tokens.resize(n * spec.seq_len);
  d.labels.resize(n * spec.seq_len);
  for (std::size_t i = 0; i < n; ++i) {
    int* tok = d.tokens.data() + i * spec.seq_len;
    int* lab = d.labels.data() + i * spec.seq_len;
    for (std::size_t t = 0; t < spec.seq_len; ++t) tok[t] = static_cast<int>(rng.below(spec.vocab_size));
    for (std::size_t t = 0; t < spec.seq_len; ++t) {
      lab[t] = spec.copy_mode == CopyMode::kReverse ? tok[spec.seq_len - 1 - t] : tok[t];
    }
  }
  return d;
}

Dataset gen_retrieval_task(const TaskSpec& spec, std::size_t n, RngStream& rng) {
  spec.validate();
  const std::size_t half = spec.vocab_size / 2;
  const std::size_t n_values = spec.vocab_size - half;
  Dataset d;
  d.seq_len = spec.model_seq_len();
  d.num_classes = n_values;
  std::vector<int> keys(half);
  for (std::size_t i = 0; i < n; ++i) {
    // partial Fisher-Yates for distinct keys
    for (std::size_t k = 0; k < half; ++k) keys[k] = static_cast<int>(k);
    for (std::size_t k = 0; k < spec.n_pairs; ++k) {
      std::swap(keys[k], keys[k + rng.below(half - k)]);
    }
    std::vector<int> values(spec.n_pairs);
    for (std::size_t k = 0; k < spec.n_pairs; ++k) {
      values[k] = static_cast<int>(half + rng.below(n_values));
      d.tokens.push_back(keys[k]);
      d.tokens.push_back(values[k]);
    }
    const std::size_t q = rng.below(spec.n_pairs);
    d.tokens.push_back(keys[q]);
    d.labels.push_back(values[q] - static_cast<int>(half));
  }
  return d;
}

std::vector<double> ClusterModel::posterior(std::span<const int> tokens) const {
  std::vector<double> lp(class_prior.size());
  for (std::size_t c = 0; c < lp.size(); ++c) {
    lp[c] = std::log(class_prior[c]);
    for (int t : tokens) lp[c] += std::log(token_probs[c][t]);
  }
  return softmax_row(std::move(lp));
}

double ClusterModel::bayes_accuracy(const Dataset& data) const {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = posterior(data.example(i));
    correct += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == data.labels[i];
  }
  return static_cast<double>(correct) / data.size();
}

ClusterTask gen_clusters_task(const TaskSpec& spec, RngStream& rng) {
  spec.validate();
  if (spec.kind != TaskKind::kClusters) throw ParameterError("gen_clusters_task needs a clusters spec");
  const std::size_t c_n = spec.n_classes, v_n = spec.vocab_size;
  RngStream model_rng = rng.split(100);
  ClusterTask task;
  task.train_model.class_prior.assign(c_n, 1.0 / c_n);
  task.shifted_model.class_prior = task.train_model.class_prior;
  for (std::size_t c = 0; c < c_n; ++c) {
    std::vector<double> logits(v_n), moved(v_n);
    for (std::size_t v = 0; v < v_n; ++v) logits[v] = spec.separation * model_rng.normal();
    for (std::size_t v = 0; v < v_n; ++v) moved[v] = logits[v] + spec.shift * model_rng.normal();
    task.train_model.token_probs.push_back(softmax_row(logits));
    task.shifted_model.token_probs.push_back(softmax_row(moved));
  }
  RngStream s_train = rng.split(0), s_val = rng.split(1), s_id = rng.split(2), s_od = rng.split(3);
  TaskSplits& sp = task.splits;
  sp.train = sample_clusters(task.train_model, spec, spec.n_train, s_train);
  sp.val = sample_clusters(task.train_model, spec, spec.n_val, s_val);
  sp.test_id = sample_clusters(task.train_model, spec, spec.n_test, s_id);
  sp.test_od = sample_clusters(task.shifted_model, spec, spec.n_test, s_od);
  sp.test_noisy = sp.test_id;
  sp.test_noisy.feature_noise_std = spec.noise;
  sp.test_noisy.noise_seed = rng.split(4).next_u64();
  return task;
}

TaskSplits make_task(const TaskSpec& spec) {
  spec.validate();
  RngStream root(spec.seed);
  if (spec.kind == TaskKind::kClusters) return gen_clusters_task(spec, root).splits;
  auto gen = [&](std::size_t n, std::uint64_t key) {
    RngStream r = root.split(key);
    return spec.kind == TaskKind::kCopy ? gen_copy_task(spec, n, r) : gen_retrieval_task(spec, n, r);
  };
  TaskSplits s;
  s.train = gen(spec.n_train, 0);
  s.val = gen(spec.n_val, 1);
  s.test_id = gen(spec.n_test, 2);
  return s;
}

AttackResult toy_attack(const Model& model, const Dataset& data, const AttackSpec& attack,
                        std::size_t limit) {
  const AttentionConfig& cfg = model.config();
  if (data.tagging || cfg.output != OutputKind::kClassify) {
    throw ParameterError("toy_attack needs a classification model and dataset");
  }
  const std::size_t n = limit == 0 ? data.size() : std::min(limit, data.size());
  const std::size_t t_len = data.seq_len, vocab = cfg.vocab_size, classes = cfg.n_classes;
  const RngStream root(attack.seed);
  NoGradGuard guard;
  AttackResult res;

  auto predict = [&](const std::vector<int>& tokens, std::size_t count) {
    Batch b;
    b.size = count;
    b.seq_len = t_len;
    b.tokens = tokens;
    return log_softmax(model.forward(b, ForwardMode::kPosteriorMean).logits);
  };
  auto argmax = [&](const Tensor& lp, std::size_t row) {
    const double* p = lp.data().data() + row * classes;
    return static_cast<int>(std::max_element(p, p + classes) - p);
  };

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> cur(data.example(i).begin(), data.example(i).end());
    const int label = data.labels[i];
    if (argmax(predict(cur, 1), 0) != label) continue;
    ++res.attempts;
    std::set<std::size_t> modified;
    bool flipped = false;
    for (std::size_t b = 0; b < attack.budget && !flipped; ++b) {
      RngStream pool_rng = root.split(i).split(b);
      std::vector<int> pool(attack.pool_size);
      for (int& c : pool) c = static_cast<int>(pool_rng.below(vocab));
      std::vector<std::pair<std::size_t, int>> edits;
      std::vector<int> batch;
      for (std::size_t pos = 0; pos < t_len; ++pos) {
        if (modified.count(pos)) continue;
        for (int c : pool) {
          if (c == cur[pos]) continue;
          edits.push_back({pos, c});
          batch.insert(batch.end(), cur.begin(), cur.end());
          batch[batch.size() - t_len + pos] = c;
        }
      }
      if (edits.empty()) break;
      const Tensor lp = predict(batch, edits.size());
      std::size_t best = 0;
      double best_loss = -1.0;
      for (std::size_t e = 0; e < edits.size(); ++e) {
        const double loss = -lp.data()[e * classes + label];
        if (loss > best_loss) {
          best_loss = loss;
          best = e;
        }
      }
      cur[edits[best].first] = edits[best].second;
      modified.insert(edits[best].first);
      flipped = argmax(lp, best) != label;
    }
    res.max_substitutions = std::max(res.max_substitutions, modified.size());
    if (!flipped) ++res.failures;
  }
  res.failure_rate = res.attempts == 0 ? 1.0 : static_cast<double>(res.failures) / res.attempts;
  return res;
}

}  // namespace babn
