// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0
//
// babn: train, evaluate, convert and inspect attention models.
//
// Exit codes: 0 ok, 1 runtime failure or failed check, 2 config error,
// 3 training divergence.

#include <malloc.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "babn/checkpoint.hpp"
#include "babn/experiment.hpp"
#include "babn/log.hpp"
#include "json.hpp"

using namespace babn;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

Model load_model(const std::string& path) { return model_from_checkpoint(load_checkpoint(path)); }

json pavpu_json(const PavpuResult& p) {
  return json{{"pavpu", p.pavpu},
              {"accurate_certain", p.cells.accurate_certain},
              {"accurate_uncertain", p.cells.accurate_uncertain},
              {"inaccurate_certain", p.cells.inaccurate_certain},
              {"inaccurate_uncertain", p.cells.inaccurate_uncertain}};
}

json gradcheck_json(const GradcheckResult& r, const Model& m) {
  return json{{"max_rel_error", r.max_rel_error},
              {"coordinates", r.coordinates},
              {"worst_param", m.named_parameters()[r.worst_param].first},
              {"worst_index", r.worst_index},
              {"analytic", r.analytic},
              {"numeric", r.numeric}};
}

int cmd_train(const std::string& config, const std::string& out) {
  const ExperimentConfig cfg = load_config(config);
  const std::string dir = out.empty() ? cfg.output_dir : out;
  std::optional<ExperimentResult> res;
  try {
    res.emplace(run_experiment(cfg, dir));
  } catch (const DivergenceError&) {
    std::ifstream hist(dir + "/history.csv");
    std::cerr << hist.rdbuf();
    throw;
  }
  const ExperimentResult& r = *res;
  std::cout << "wrote " << dir << "/summary.json\n";
  for (const SplitReport& s : r.splits) {
    std::printf("%-10s acc %.4f  ece %.4f  pavpu %.4f\n", s.name.c_str(), s.accuracy, s.ece.ece,
                s.pavpu);
  }
  return 0;
}

int cmd_eval(const std::string& config, const std::string& ckpt, const std::string& mode,
             std::size_t samples) {
  const ExperimentConfig cfg = load_config(config);
  const Model model = load_model(ckpt);
  if (!(model.config() == cfg.attention_config())) {
    throw ConfigError("model", "checkpoint architecture does not match the config");
  }
  const bool sampled = mode == "sample";
  if (sampled && model.kind() != ModelKind::kBabn) {
    throw ParameterError("--mode sample needs a BABN checkpoint");
  }
  const TaskSplits data = make_task(cfg.task);
  const RngStream root = RngStream(cfg.seed).split(12);
  MetricSpec metrics = cfg.metrics;
  json out;
  out["checkpoint"] = ckpt;
  out["mode"] = mode;
  out["samples"] = model.kind() == ModelKind::kBabn ? samples : 0;
  json splits = json::object();
  std::size_t si = 0;
  for (const auto& [name, d] : eval_splits(data)) {
    const RngStream rng = root.split(si++);
    const auto records = sampled ? collect_sampled_records(model, *d, samples, rng, metrics.eval_limit)
                                 : collect_records(model, *d, samples, rng, metrics.eval_limit);
    const SplitReport r = evaluate_split(name, records, metrics);
    json j{{"count", r.count}, {"accuracy", r.accuracy}, {"nll", r.nll}, {"ece", r.ece.ece},
           {"pavpu", r.pavpu}};
    j["pavpu_test"] = r.pavpu_test ? pavpu_json(*r.pavpu_test) : json(nullptr);
    j["pavpu_confidence"] = pavpu_json(r.pavpu_confidence);
    splits[name] = j;
  }
  out["splits"] = splits;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_convert(const std::string& from, const std::string& to, const BabnConstants& c,
                std::uint64_t seed) {
  RngStream rng(seed);
  const Checkpoint out = convert_checkpoint(load_checkpoint(from), c, rng);
  save_checkpoint(out, to);
  std::cout << "wrote " << to << " (" << out.tensors.size() << " tensors)\n";
  return 0;
}

int cmd_gradcheck(const std::string& config, std::size_t coords) {
  const ExperimentConfig cfg = load_config(config);
  const Model model = build_model(cfg);
  const TaskSplits data = make_task(cfg.task);
  const std::size_t idx[] = {0, 1};
  const Batch batch = make_batch(data.train, idx, model.config().d_model);
  GradcheckOptions opts;
  opts.max_coords_per_param = coords;
  opts.seed = cfg.seed;
  const std::uint64_t eps_seed = RngStream(cfg.seed).split(15).next_u64();
  constexpr double kTol = 1e-4;
  json out;
  bool ok = true;
  auto run = [&](const char* name, double nll_w, double kl_w) {
    for (const Tensor& p : model.parameters()) p.zero_grad();
    const GradcheckResult r = gradcheck_elbo(model, batch, eps_seed, nll_w, kl_w, opts);
    ok = ok && r.max_rel_error < kTol;
    out[name] = gradcheck_json(r, model);
  };
  run("elbo", 1.0, 1.0);
  run("nll_only", 1.0, 0.0);
  if (model.kind() == ModelKind::kBabn) run("kl_only", 0.0, 1.0);
  out["tolerance"] = kTol;
  out["pass"] = ok;
  std::cout << out.dump(2) << "\n";
  return ok ? 0 : kExitFailure;
}

int cmd_stats(const std::string& config, const std::string& ckpt, std::size_t samples,
              std::size_t index) {
  const ExperimentConfig cfg = load_config(config);
  const Model model = load_model(ckpt);
  const TaskSplits data = make_task(cfg.task);
  if (index >= data.test_id.size()) throw InputError("--index beyond the test split");
  RngStream rng = RngStream(cfg.seed).split(13);
  std::cout << attention_stats_csv(posterior_stats(model, data.test_id.example(index), samples, rng));
  return 0;
}

int cmd_attack(const std::string& config, const std::string& ckpt, std::size_t budget,
               std::size_t pool, std::size_t limit) {
  const ExperimentConfig cfg = load_config(config);
  const Model model = load_model(ckpt);
  const TaskSplits data = make_task(cfg.task);
  AttackSpec spec;
  spec.budget = budget;
  spec.pool_size = pool;
  spec.seed = RngStream(cfg.seed).split(16).next_u64();
  const AttackResult r = toy_attack(model, data.test_id, spec, limit);
  json out{{"budget", budget},
           {"pool_size", pool},
           {"attempts", r.attempts},
           {"failures", r.failures},
           {"failure_rate", r.failure_rate},
           {"max_substitutions", r.max_substitutions}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // keep freed tensor buffers in the heap instead of returning them to the OS
  mallopt(M_MMAP_THRESHOLD, 1 << 26);
  mallopt(M_TRIM_THRESHOLD, 1 << 28);

  CLI::App app{"Bayesian attention belief networks: experiments and tools"};
  app.require_subcommand(1);

  std::string config, out, ckpt, from, to, mode = "posterior_mean";
  std::size_t samples = 20, budget = 1, pool = 8, limit = 0, coords = 16, index = 0;
  BabnConstants constants;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "train and evaluate from a config");
  train->add_option("config", config, "experiment config (JSON)")->required();
  train->add_option("--out", out, "output directory (default: config output.dir)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's task");
  eval->add_option("config", config)->required();
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--mode", mode)->check(CLI::IsMember({"sample", "posterior_mean"}));
  eval->add_option("--samples", samples, "posterior samples per example")->check(CLI::Range(2, 100000));

  auto* convert = app.add_subcommand("convert", "deterministic checkpoint to BABN");
  convert->add_option("--from", from)->required();
  convert->add_option("--to", to)->required();
  convert->add_option("--rho", constants.rho);
  convert->add_option("--sigma", constants.sigma);
  convert->add_option("--beta", constants.beta);
  convert->add_option("--seed", seed, "seed for the added encoder and prior weights");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the ELBO gradient");
  gradcheck->add_option("config", config)->required();
  gradcheck->add_option("--coords", coords, "coordinates checked per tensor (0 = all)");

  auto* stats = app.add_subcommand("stats", "attention statistics table for one test sequence");
  stats->add_option("config", config)->required();
  stats->add_option("--ckpt", ckpt)->required();
  stats->add_option("--samples", samples)->required()->check(CLI::Range(2, 100000));
  stats->add_option("--index", index, "test example");

  auto* attack = app.add_subcommand("attack", "greedy token-substitution attack");
  attack->add_option("config", config)->required();
  attack->add_option("--ckpt", ckpt)->required();
  attack->add_option("--budget", budget)->required();
  attack->add_option("--pool", pool, "candidate tokens per position");
  attack->add_option("--limit", limit, "examples attacked (0 = all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, out);
    if (*eval) return cmd_eval(config, ckpt, mode, samples);
    if (*convert) return cmd_convert(from, to, constants, seed);
    if (*gradcheck) return cmd_gradcheck(config, coords);
    if (*stats) return cmd_stats(config, ckpt, samples, index);
    if (*attack) return cmd_attack(config, ckpt, budget, pool, limit);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
