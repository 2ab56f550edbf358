// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "babn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "babn/checkpoint.hpp"
#include "babn/log.hpp"
#include "json.hpp"

namespace babn {
namespace {

using json = nlohmann::ordered_json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// Walks one JSON object, remembering which keys were read so that
/// finish() can reject the rest.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  const json* find(const std::string& key, bool required) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) {
      if (required) throw ConfigError(join(path_, key), "missing required field");
      return nullptr;
    }
    return &*it;
  }

  Fields object(const std::string& key, bool required, const json& empty) {
    const json* v = find(key, required);
    return Fields(v ? *v : empty, join(path_, key));
  }

  std::uint64_t uint(const std::string& key, std::uint64_t def, bool required = false,
                     std::uint64_t min = 0) {
    const json* v = find(key, required);
    if (!v) return def;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                    v->get<std::int64_t>() < 0)) {
      throw ConfigError(join(path_, key), "expected a non-negative integer");
    }
    const auto x = v->get<std::uint64_t>();
    if (x < min) {
      throw ConfigError(join(path_, key), "must be at least " + std::to_string(min));
    }
    return x;
  }

  double real(const std::string& key, double def, bool required = false) {
    const json* v = find(key, required);
    if (!v) return def;
    if (!v->is_number()) throw ConfigError(join(path_, key), "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) throw ConfigError(join(path_, key), "must be finite");
    return x;
  }

  std::string str(const std::string& key, const std::string& def, bool required = false) {
    const json* v = find(key, required);
    if (!v) return def;
    if (!v->is_string()) throw ConfigError(join(path_, key), "expected a string");
    return v->get<std::string>();
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const std::string& path() const { return path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require_range(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ConfigError(path, msg);
}

ModelKind model_kind_from_string(const std::string& s, const std::string& path) {
  if (s == "deterministic") return ModelKind::kDeterministic;
  if (s == "babn") return ModelKind::kBabn;
  throw ConfigError(path, "expected \"deterministic\" or \"babn\", got \"" + s + "\"");
}

const char* to_string(ModelKind k) { return k == ModelKind::kBabn ? "babn" : "deterministic"; }

const char* to_string(CopyMode m) { return m == CopyMode::kReverse ? "reverse" : "identity"; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed: " + path.string());
}

std::string history_csv(const TrainHistory& h) {
  std::string s = "step,nll,kl,kl_weight,loss,elbo,grad_norm,skipped\n";
  for (const StepRecord& r : h.steps) {
    s += std::to_string(r.step) + "," + fmt(r.nll) + "," + fmt(r.kl) + "," + fmt(r.kl_weight) +
         "," + fmt(r.loss) + "," + fmt(r.elbo) + "," + fmt(r.grad_norm) + "," +
         (r.skipped ? "1" : "0") + "\n";
  }
  return s;
}

std::string evals_csv(const TrainHistory& h) {
  std::string s = "step,val_accuracy,val_nll\n";
  for (const EvalRecord& e : h.evals) {
    s += std::to_string(e.step) + "," + fmt(e.accuracy) + "," + fmt(e.nll) + "\n";
  }
  return s;
}

json cells_json(const PavpuResult& r) {
  json j;
  j["pavpu"] = r.pavpu;
  j["accurate_certain"] = r.cells.accurate_certain;
  j["accurate_uncertain"] = r.cells.accurate_uncertain;
  j["inaccurate_certain"] = r.cells.inaccurate_certain;
  j["inaccurate_uncertain"] = r.cells.inaccurate_uncertain;
  return j;
}

json train_json(const TrainHistory& h) {
  json j;
  j["steps_run"] = h.steps.size();
  j["best_step"] = h.best_step;
  j["best_val_accuracy"] = h.best_accuracy;
  j["diverged"] = h.diverged;
  if (!h.steps.empty()) {
    j["final_nll"] = h.steps.back().nll;
    j["final_kl"] = h.steps.back().kl;
  } else {
    j["final_nll"] = nullptr;
    j["final_kl"] = nullptr;
  }
  j["diagnostics"] = h.diagnostics;
  return j;
}

std::vector<double> softmax_rows(const Tensor& logits) {
  NoGradGuard guard;
  return softmax(logits, -1).values();
}

}  // namespace

AttentionConfig ExperimentConfig::attention_config() const {
  AttentionConfig c;
  c.d_model = model.d_model;
  c.n_heads = model.n_heads;
  c.n_layers = model.n_layers;
  c.ffn_hidden = model.ffn_hidden;
  c.vocab_size = task.vocab_size;
  c.max_seq_len = task.model_seq_len();
  c.n_classes = task.model_classes();
  c.output = task.tagging() ? OutputKind::kTagging : OutputKind::kClassify;
  // retrieval answers from the query token, the last position
  c.pooling = task.kind == TaskKind::kRetrieval ? Pooling::kLast : Pooling::kMean;
  return c;
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  const json empty = json::object();
  ExperimentConfig cfg;
  Fields top(root, "");
  cfg.version = static_cast<int>(top.uint("version", 0, true));
  require_range(cfg.version == kConfigVersion, "version",
                "unsupported version " + std::to_string(cfg.version) + " (expected " +
                    std::to_string(kConfigVersion) + ")");
  cfg.seed = top.uint("seed", 0, true);

  {
    Fields f = top.object("task", true, empty);
    TaskSpec& t = cfg.task;
    const std::string kind = f.str("kind", "", true);
    try {
      t.kind = task_kind_from_string(kind);
    } catch (const Error& e) {
      throw ConfigError("task.kind", e.what());
    }
    t.vocab_size = f.uint("vocab_size", t.vocab_size, false, 2);
    t.seq_len = f.uint("seq_len", t.seq_len, false, 1);
    t.n_train = f.uint("n_train", t.n_train, false, 1);
    t.n_val = f.uint("n_val", t.n_val, false, 1);
    t.n_test = f.uint("n_test", t.n_test, false, 1);
    t.seed = f.uint("seed", cfg.seed);
    const std::string mode = f.str("copy_mode", "reverse");
    if (mode == "reverse") {
      t.copy_mode = CopyMode::kReverse;
    } else if (mode == "identity") {
      t.copy_mode = CopyMode::kIdentity;
    } else {
      throw ConfigError("task.copy_mode", "expected \"reverse\" or \"identity\"");
    }
    t.n_pairs = f.uint("n_pairs", t.n_pairs, false, 1);
    t.n_classes = f.uint("n_classes", t.n_classes, false, 2);
    t.separation = f.real("separation", t.separation);
    t.shift = f.real("shift", t.shift);
    t.noise = f.real("noise", t.noise);
    f.finish();
    try {
      t.validate();
    } catch (const Error& e) {
      throw ConfigError("task", e.what());
    }
  }

  {
    Fields f = top.object("model", true, empty);
    ModelSpec& m = cfg.model;
    m.kind = model_kind_from_string(f.str("kind", "", true), "model.kind");
    m.d_model = f.uint("d_model", m.d_model, false, 1);
    m.n_heads = f.uint("n_heads", m.n_heads, false, 1);
    m.n_layers = f.uint("n_layers", m.n_layers, false, 1);
    m.ffn_hidden = f.uint("ffn_hidden", m.ffn_hidden, false, 1);
    m.constants.beta = f.real("beta", m.constants.beta);
    m.constants.rho = f.real("rho", m.constants.rho);
    m.constants.sigma = f.real("sigma", m.constants.sigma);
    if (f.has("init_from")) {
      std::filesystem::path p = f.str("init_from", "");
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      m.init_from = p.string();
    }
    f.finish();
    require_range(m.d_model % m.n_heads == 0, "model.n_heads", "must divide model.d_model");
    try {
      m.constants.validate();
    } catch (const Error& e) {
      throw ConfigError("model", e.what());
    }
  }

  {
    Fields f = top.object("train", true, empty);
    TrainConfig& t = cfg.train;
    t.steps = f.uint("steps", 0, true, 1);
    t.batch_size = f.uint("batch_size", t.batch_size, false, 1);
    t.adam.lr = f.real("lr", t.adam.lr);
    require_range(t.adam.lr > 0.0, "train.lr", "must be positive");
    t.clip_norm = f.real("clip_norm", t.clip_norm);
    require_range(t.clip_norm > 0.0, "train.clip_norm", "must be positive");
    t.eval_every = f.uint("eval_every", t.eval_every, false, 1);
    t.kl_w0 = f.real("kl_w0", t.kl_w0);
    require_range(t.kl_w0 > 0.0 && t.kl_w0 <= 1.0, "train.kl_w0", "must lie in (0, 1]");
    t.warmup_fraction = f.real("warmup_fraction", t.warmup_fraction);
    require_range(t.warmup_fraction >= 0.0 && t.warmup_fraction <= 1.0, "train.warmup_fraction",
                  "must lie in [0, 1]");
    t.eval_limit = f.uint("eval_limit", t.eval_limit);
    f.finish();
  }

  {
    Fields f = top.object("metrics", false, empty);
    MetricSpec& m = cfg.metrics;
    m.ece_bins = f.uint("ece_bins", m.ece_bins, false, 1);
    m.pavpu_samples = f.uint("pavpu_samples", m.pavpu_samples, false, 2);
    m.p_threshold = f.real("p_threshold", m.p_threshold);
    require_range(m.p_threshold > 0.0 && m.p_threshold < 1.0, "metrics.p_threshold",
                  "must lie in (0, 1)");
    m.confidence_threshold = f.real("confidence_threshold", m.confidence_threshold);
    require_range(m.confidence_threshold > 0.0 && m.confidence_threshold <= 1.0,
                  "metrics.confidence_threshold", "must lie in (0, 1]");
    m.stats_samples = f.uint("stats_samples", m.stats_samples, false, 2);
    m.eval_limit = f.uint("eval_limit", m.eval_limit);
    f.finish();
  }

  {
    Fields f = top.object("output", false, empty);
    cfg.output_dir = f.str("dir", cfg.output_dir);
    f.finish();
  }
  top.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["seed"] = cfg.seed;
  const TaskSpec& t = cfg.task;
  json task;
  task["kind"] = to_string(t.kind);
  task["vocab_size"] = t.vocab_size;
  task["seq_len"] = t.seq_len;
  task["n_train"] = t.n_train;
  task["n_val"] = t.n_val;
  task["n_test"] = t.n_test;
  task["seed"] = t.seed;
  task["copy_mode"] = to_string(t.copy_mode);
  task["n_pairs"] = t.n_pairs;
  task["n_classes"] = t.n_classes;
  task["separation"] = t.separation;
  task["shift"] = t.shift;
  task["noise"] = t.noise;
  j["task"] = task;
  json model;
  model["kind"] = to_string(cfg.model.kind);
  model["d_model"] = cfg.model.d_model;
  model["n_heads"] = cfg.model.n_heads;
  model["n_layers"] = cfg.model.n_layers;
  model["ffn_hidden"] = cfg.model.ffn_hidden;
  model["beta"] = cfg.model.constants.beta;
  model["rho"] = cfg.model.constants.rho;
  model["sigma"] = cfg.model.constants.sigma;
  if (cfg.model.init_from) model["init_from"] = *cfg.model.init_from;
  j["model"] = model;
  json train;
  train["steps"] = cfg.train.steps;
  train["batch_size"] = cfg.train.batch_size;
  train["lr"] = cfg.train.adam.lr;
  train["clip_norm"] = cfg.train.clip_norm;
  train["eval_every"] = cfg.train.eval_every;
  train["kl_w0"] = cfg.train.kl_w0;
  train["warmup_fraction"] = cfg.train.warmup_fraction;
  train["eval_limit"] = cfg.train.eval_limit;
  j["train"] = train;
  json metrics;
  metrics["ece_bins"] = cfg.metrics.ece_bins;
  metrics["pavpu_samples"] = cfg.metrics.pavpu_samples;
  metrics["p_threshold"] = cfg.metrics.p_threshold;
  metrics["confidence_threshold"] = cfg.metrics.confidence_threshold;
  metrics["stats_samples"] = cfg.metrics.stats_samples;
  metrics["eval_limit"] = cfg.metrics.eval_limit;
  j["metrics"] = metrics;
  j["output"] = json{{"dir", cfg.output_dir}};
  return j.dump(2) + "\n";
}

Model build_model(const ExperimentConfig& cfg) {
  const AttentionConfig ac = cfg.attention_config();
  const RngStream root(cfg.seed);
  if (!cfg.model.init_from) {
    RngStream init_rng = root.split(10);
    return Model::init(ac, cfg.model.kind, cfg.model.constants, init_rng);
  }
  Checkpoint ck;
  try {
    ck = load_checkpoint(*cfg.model.init_from);
  } catch (const Error& e) {
    throw ConfigError("model.init_from", e.what());
  }
  if (!(ck.config == ac)) {
    throw ConfigError("model.init_from", "checkpoint architecture does not match the config");
  }
  const bool det = ck.format == kDeterministicFormat;
  if (cfg.model.kind == ModelKind::kBabn && det) {
    RngStream conv_rng = root.split(14);
    return model_from_checkpoint(convert_checkpoint(ck, cfg.model.constants, conv_rng));
  }
  if ((cfg.model.kind == ModelKind::kBabn) == det) {
    throw ConfigError("model.init_from", "cannot initialize a " +
                                             std::string(to_string(cfg.model.kind)) +
                                             " model from a " + ck.format + " checkpoint");
  }
  Model m = model_from_checkpoint(ck);
  if (m.kind() == ModelKind::kBabn) m.set_constants(cfg.model.constants);
  return m;
}

namespace {

/// Shared loop of the two record collectors.
std::vector<PredictionRecord> collect(const Model& model, const Dataset& data, std::size_t samples,
                                      const RngStream& rng, std::size_t limit,
                                      std::size_t batch_size, bool average_samples) {
  if (batch_size == 0) throw ParameterError("collect_records: batch_size must be positive");
  const std::size_t n = limit == 0 ? data.size() : std::min(limit, data.size());
  const bool bayes = model.kind() == ModelKind::kBabn;
  if (!bayes) samples = 0;
  if (average_samples && samples == 0) {
    throw ParameterError("sampled evaluation needs a BABN model and samples > 0");
  }
  const std::size_t c = model.config().n_classes;
  std::vector<PredictionRecord> out;
  out.reserve(n * data.labels_per_example());
  NoGradGuard guard;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0, bi = 0; start < n; start += batch_size, ++bi) {
    idx.resize(std::min(batch_size, n - start));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Batch b = make_batch(data, idx, model.config().d_model);
    const std::size_t first = out.size();
    for (int y : b.labels) {
      PredictionRecord r;
      r.label = y;
      r.samples.reserve(samples);
      out.push_back(std::move(r));
    }
    if (!average_samples) {
      const std::vector<double> p =
          softmax_rows(model.forward(b, ForwardMode::kPosteriorMean).logits);
      for (std::size_t r = 0; r < b.labels.size(); ++r) {
        out[first + r].mean_probs.assign(p.begin() + r * c, p.begin() + (r + 1) * c);
      }
    }
    for (std::size_t m = 0; m < samples; ++m) {
      RngStream eps = rng.split(m).split(bi);
      const std::vector<double> p = softmax_rows(model.forward(b, ForwardMode::kSample, &eps).logits);
      for (std::size_t r = 0; r < b.labels.size(); ++r) {
        out[first + r].samples.emplace_back(p.begin() + r * c, p.begin() + (r + 1) * c);
      }
    }
    if (average_samples) {
      for (std::size_t r = 0; r < b.labels.size(); ++r) {
        PredictionRecord& rec = out[first + r];
        rec.mean_probs.assign(c, 0.0);
        for (const auto& s : rec.samples) {
          for (std::size_t k = 0; k < c; ++k) rec.mean_probs[k] += s[k];
        }
        for (double& v : rec.mean_probs) v /= static_cast<double>(samples);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<PredictionRecord> collect_records(const Model& model, const Dataset& data,
                                              std::size_t samples, const RngStream& rng,
                                              std::size_t limit, std::size_t batch_size) {
  return collect(model, data, samples, rng, limit, batch_size, false);
}

std::vector<PredictionRecord> collect_sampled_records(const Model& model, const Dataset& data,
                                                      std::size_t samples, const RngStream& rng,
                                                      std::size_t limit, std::size_t batch_size) {
  return collect(model, data, samples, rng, limit, batch_size, true);
}

SplitReport evaluate_split(const std::string& name, const std::vector<PredictionRecord>& records,
                           const MetricSpec& metrics) {
  if (records.empty()) throw ParameterError("evaluate_split: no records for " + name);
  SplitReport r;
  r.name = name;
  r.count = records.size();
  r.accuracy = accuracy(records);
  double nll = 0.0;
  for (const PredictionRecord& p : records) {
    nll -= std::log(std::max(p.mean_probs[p.label], std::numeric_limits<double>::min()));
  }
  r.nll = nll / static_cast<double>(records.size());
  r.ece = ece(records, metrics.ece_bins);
  r.pavpu_confidence = pavpu_confidence(records, metrics.confidence_threshold);
  if (records.front().samples.size() >= 2) {
    r.pavpu_test = pavpu(records, metrics.p_threshold);
    r.pavpu = r.pavpu_test->pavpu;
  } else {
    r.pavpu = r.pavpu_confidence.pavpu;
  }
  return r;
}

const SplitReport& ExperimentResult::split(const std::string& name) const {
  for (const SplitReport& s : splits) {
    if (s.name == name) return s;
  }
  throw ParameterError("no split named " + name);
}

std::vector<std::pair<std::string, const Dataset*>> eval_splits(const TaskSplits& s) {
  std::vector<std::pair<std::string, const Dataset*>> out;
  const std::pair<const char*, const Dataset*> all[] = {
      {"val", &s.val}, {"test_id", &s.test_id}, {"test_od", &s.test_od}, {"test_noisy", &s.test_noisy}};
  for (const auto& [name, d] : all) {
    if (d->size() > 0) out.emplace_back(name, d);
  }
  return out;
}

std::string attention_stats_csv(const AttentionStats& st) {
  std::string s = "layer,head,query,key,mean,std_over_mean\n";
  for (std::size_t l = 0; l < st.layers; ++l) {
    for (std::size_t h = 0; h < st.heads; ++h) {
      for (std::size_t i = 0; i < st.seq_len; ++i) {
        for (std::size_t j = 0; j < st.seq_len; ++j) {
          s += std::to_string(l) + "," + std::to_string(h) + "," + std::to_string(i) + "," +
               std::to_string(j) + "," + fmt(st.at(st.mean, l, h, i, j)) + "," +
               fmt(st.at(st.std_over_mean, l, h, i, j)) + "\n";
        }
      }
    }
  }
  return s;
}

std::string reliability_csv(const std::vector<SplitReport>& splits) {
  std::string s = "split,bin,lo,hi,count,accuracy,confidence\n";
  for (const SplitReport& r : splits) {
    for (std::size_t b = 0; b < r.ece.bins.size(); ++b) {
      const ReliabilityBin& bin = r.ece.bins[b];
      s += r.name + "," + std::to_string(b) + "," + fmt(bin.lo) + "," + fmt(bin.hi) + "," +
           std::to_string(bin.count) + "," + fmt(bin.accuracy) + "," + fmt(bin.confidence) + "\n";
    }
  }
  return s;
}

std::string pavpu_csv(const std::vector<SplitReport>& splits) {
  std::string s =
      "split,method,accurate_certain,accurate_uncertain,inaccurate_certain,inaccurate_uncertain,"
      "pavpu\n";
  auto row = [&](const std::string& split, const char* method, const PavpuResult& p) {
    s += split + "," + method + "," + std::to_string(p.cells.accurate_certain) + "," +
         std::to_string(p.cells.accurate_uncertain) + "," +
         std::to_string(p.cells.inaccurate_certain) + "," +
         std::to_string(p.cells.inaccurate_uncertain) + "," + fmt(p.pavpu) + "\n";
  };
  for (const SplitReport& r : splits) {
    if (r.pavpu_test) row(r.name, "margin_t_test", *r.pavpu_test);
    row(r.name, "confidence_threshold", r.pavpu_confidence);
  }
  return s;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const RngStream root(cfg.seed);
  log(LogLevel::kInfo, "generating " + std::string(to_string(cfg.task.kind)) + " task");
  const TaskSplits data = make_task(cfg.task);
  Model model = build_model(cfg);

  RngStream train_rng = root.split(11);
  TrainResult tr = train(model, data.train, data.val, cfg.train, train_rng);
  write_file(out_dir / "history.csv", history_csv(tr.history));
  write_file(out_dir / "evals.csv", evals_csv(tr.history));

  json summary;
  summary["format"] = "babn-report";
  summary["version"] = kReportVersion;
  summary["config"] = json::parse(config_to_json(cfg));
  summary["model"] = json{{"kind", to_string(model.kind())},
                          {"parameters", [&] {
                             std::size_t n = 0;
                             for (const Tensor& t : model.parameters()) n += t.size();
                             return n;
                           }()}};
  summary["train"] = train_json(tr.history);

  if (tr.history.diverged) {
    summary["splits"] = json::object();
    write_file(out_dir / "summary.json", summary.dump(2) + "\n");
    throw DivergenceError("training diverged at " + tr.history.diagnostics);
  }

  save_checkpoint(to_checkpoint(tr.best), out_dir / "model.ckpt.json");

  ExperimentResult res{tr.best, tr.history, {}};
  const bool bayes = tr.best.kind() == ModelKind::kBabn;
  const RngStream eval_root = root.split(12);
  std::size_t si = 0;
  json splits = json::object();
  for (const auto& [name, d] : eval_splits(data)) {
    const auto records = collect_records(tr.best, *d, bayes ? cfg.metrics.pavpu_samples : 0,
                                         eval_root.split(si++), cfg.metrics.eval_limit);
    SplitReport r = evaluate_split(name, records, cfg.metrics);
    json j;
    j["count"] = r.count;
    j["accuracy"] = r.accuracy;
    j["nll"] = r.nll;
    j["ece"] = r.ece.ece;
    j["pavpu"] = r.pavpu;
    j["pavpu_method"] = r.pavpu_test ? "margin_t_test" : "confidence_threshold";
    j["pavpu_test"] = r.pavpu_test ? cells_json(*r.pavpu_test) : json(nullptr);
    j["pavpu_confidence"] = cells_json(r.pavpu_confidence);
    splits[name] = j;
    log(LogLevel::kInfo, name + ": accuracy " + fmt(r.accuracy) + " ece " + fmt(r.ece.ece) +
                             " pavpu " + fmt(r.pavpu));
    res.splits.push_back(std::move(r));
  }
  summary["splits"] = splits;

  RngStream stats_rng = root.split(13);
  const AttentionStats st =
      posterior_stats(tr.best, data.test_id.example(0), cfg.metrics.stats_samples, stats_rng);
  write_file(out_dir / "attention_stats.csv", attention_stats_csv(st));
  write_file(out_dir / "reliability.csv", reliability_csv(res.splits));
  write_file(out_dir / "pavpu.csv", pavpu_csv(res.splits));
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  return res;
}

}  // namespace babn
