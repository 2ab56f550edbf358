// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "babn/error.hpp"
#include "babn/log.hpp"

namespace babn {
namespace {

double kl_normalizer(const AttentionConfig& cfg, std::size_t seq_len) {
  return cfg.output == OutputKind::kTagging ? static_cast<double>(seq_len) : 1.0;
}

}  // namespace

AnnealSchedule AnnealSchedule::standard(std::size_t total_steps) {
  AnnealSchedule s;
  s.total_steps = total_steps;
  s.warmup_steps = total_steps / 10;
  return s;
}

void AnnealSchedule::validate() const {
  if (!(w0 > 0.0 && w0 <= 1.0)) throw ParameterError("anneal w0 must lie in (0, 1]");
}

double kl_anneal(std::size_t step, const AnnealSchedule& s) {
  s.validate();
  if (step >= s.warmup_steps) return 1.0;
  const double frac = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  return s.w0 + (1.0 - s.w0) * frac;
}

Tensor elbo_loss(const Tensor& logits, std::span<const int> labels,
                 const std::vector<Tensor>& kl_terms, double kl_weight, double kl_normalizer) {
  Tensor loss = cross_entropy(logits, labels);
  if (kl_terms.empty() || kl_weight == 0.0) return loss;
  Tensor kl = kl_terms[0];
  for (std::size_t i = 1; i < kl_terms.size(); ++i) kl = add(kl, kl_terms[i]);
  return add(loss, scale(kl, kl_weight / kl_normalizer));
}

std::string elbo_diagnostics(const ForwardResult& r) {
  std::ostringstream os;
  os << "layer KL:";
  for (const Tensor& kl : r.kl_per_layer) os << " " << kl.item();
  for (std::size_t l = 0; l < r.trace.layers.size(); ++l) {
    double m = 0.0;
    for (double v : r.trace.layers[l].phi.values()) m = std::max(m, std::abs(v));
    os << "; max|phi| layer " << l << " = " << m;
  }
  return os.str();
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0) || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) ||
      !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) || !(cfg_.eps > 0.0)) {
    throw ParameterError("invalid Adam settings");
  }
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

bool Adam::step() {
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.node()->grad) {
      if (!std::isfinite(g)) {
        log(LogLevel::kWarn, "adam: non-finite gradient, step skipped");
        return false;
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    if (!p.has_grad()) continue;
    const std::vector<double>& g = p.node()->grad;
    auto w = p.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mh = m_[i][j] / c1, vh = v_[i][j] / c2;
      w[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
  return true;
}

void Adam::zero_grad() {
  for (const Tensor& p : params_) p.zero_grad();
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.node()->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const double f = max_norm / norm;
    for (const Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.node()->grad) g *= f;
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  if (steps == 0) throw ParameterError("train.steps must be positive");
  if (batch_size == 0) throw ParameterError("train.batch_size must be positive");
  if (eval_every == 0) throw ParameterError("train.eval_every must be positive");
  if (!(clip_norm > 0.0)) throw ParameterError("train.clip_norm must be positive");
  if (!(kl_w0 > 0.0 && kl_w0 <= 1.0)) throw ParameterError("train.kl_w0 must lie in (0, 1]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ParameterError("train.warmup_fraction must lie in [0, 1]");
  }
}

EvalSummary evaluate(const Model& model, const Dataset& data, std::size_t batch_size,
                     std::size_t limit) {
  const std::size_t n = limit == 0 ? data.size() : std::min(limit, data.size());
  if (n == 0) throw ParameterError("evaluate: empty dataset");
  NoGradGuard guard;
  EvalSummary s;
  double nll = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    idx.resize(std::min(batch_size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx, model.config().d_model);
    const Tensor lp = log_softmax(model.forward(b, ForwardMode::kPosteriorMean).logits);
    const std::size_t c = lp.dim(1);
    for (std::size_t r = 0; r < b.labels.size(); ++r) {
      const double* row = lp.data().data() + r * c;
      const std::size_t pred = std::max_element(row, row + c) - row;
      correct += static_cast<int>(pred) == b.labels[r];
      nll -= row[b.labels[r]];
    }
    s.count += b.labels.size();
  }
  s.accuracy = static_cast<double>(correct) / s.count;
  s.nll = nll / s.count;
  return s;
}

TrainResult train(Model& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, RngStream& rng) {
  cfg.validate();
  if (train_set.size() == 0) throw ParameterError("train: empty training set");
  AnnealSchedule sched;
  sched.w0 = cfg.kl_w0;
  sched.total_steps = cfg.steps;
  sched.warmup_steps = static_cast<std::size_t>(cfg.warmup_fraction * cfg.steps);

  const std::vector<Tensor> params = model.parameters();
  Adam opt(params, cfg.adam);
  RngStream batch_rng = rng.split(1);
  const RngStream eps_root = rng.split(2);
  const double norm = kl_normalizer(model.config(), train_set.seq_len);
  const bool bayes = model.kind() == ModelKind::kBabn;

  TrainResult res{model.clone(), {}};
  TrainHistory& h = res.history;
  int bad_in_a_row = 0;
  std::vector<std::size_t> idx(cfg.batch_size);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& i : idx) i = batch_rng.below(train_set.size());
    const Batch batch = make_batch(train_set, idx, model.config().d_model);
    RngStream eps = eps_root.split(step);
    const double w = kl_anneal(step - 1, sched);

    opt.zero_grad();
    const ForwardResult f = model.forward(batch, ForwardMode::kSample, bayes ? &eps : nullptr);
    const Tensor nll = cross_entropy(f.logits, batch.labels);
    const Tensor loss = elbo_loss(f.logits, batch.labels, f.kl_per_layer, w, norm);

    StepRecord rec;
    rec.step = step;
    rec.nll = nll.item();
    for (const Tensor& kl : f.kl_per_layer) rec.kl += kl.item();
    rec.kl_weight = w;
    rec.loss = loss.item();
    rec.elbo = -rec.loss;
    if (!std::isfinite(rec.loss)) {
      rec.skipped = true;
      h.steps.push_back(rec);
      h.diagnostics = "step " + std::to_string(step) + ": " + elbo_diagnostics(f);
      log(LogLevel::kWarn, "non-finite loss, " + h.diagnostics);
      if (++bad_in_a_row >= 2) {
        h.diverged = true;
        break;
      }
      continue;
    }
    bad_in_a_row = 0;
    loss.backward();
    rec.grad_norm = clip_grad_norm(params, cfg.clip_norm);
    rec.skipped = !opt.step();
    h.steps.push_back(rec);

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      const EvalSummary e = evaluate(model, val_set, 256, cfg.eval_limit);
      h.evals.push_back({step, e.accuracy, e.nll});
      log(LogLevel::kInfo, "step " + std::to_string(step) + " loss " + std::to_string(rec.loss) +
                               " val acc " + std::to_string(e.accuracy));
      if (e.accuracy > h.best_accuracy) {
        h.best_accuracy = e.accuracy;
        h.best_step = step;
        res.best.load_values(model);
      }
    }
  }
  if (h.evals.empty()) res.best.load_values(model);
  return res;
}

GradcheckResult gradcheck_elbo(const Model& model, const Batch& batch, std::uint64_t eps_seed,
                               double nll_weight, double kl_weight, const GradcheckOptions& opts) {
  const double norm = kl_normalizer(model.config(), batch.seq_len);
  auto loss = [&] {
    RngStream eps(eps_seed);
    const ForwardResult f = model.forward(batch, ForwardMode::kSample, &eps);
    Tensor l = scale(cross_entropy(f.logits, batch.labels), nll_weight);
    for (const Tensor& kl : f.kl_per_layer) l = add(l, scale(kl, kl_weight / norm));
    return l;
  };
  return gradcheck(loss, model.parameters(), opts);
}

}  // namespace babn
