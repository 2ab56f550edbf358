// SPDX-FileCopyrightText: © 2026 BABN contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "babn/error.hpp"
#include "babn/experiment.hpp"
#include "doctest.h"

using namespace babn;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"({"version": 1, "seed": 4,
  "task": {"kind": "copy"},
  "model": {"kind": "deterministic"},
  "train": {"steps": 10}})";

std::string config_error_path(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

std::string with(const std::string& base, const std::string& from, const std::string& to) {
  std::string s = base;
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  s.replace(at, from.size(), to);
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("babn_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BABN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallRun = R"({"version": 1, "seed": 6,
  "task": {"kind": "clusters", "n_train": 400, "n_val": 50, "n_test": 60, "shift": 1.0, "noise": 0.5},
  "model": {"kind": "babn", "d_model": 16, "n_heads": 2, "n_layers": 1, "ffn_hidden": 16},
  "train": {"steps": 30, "eval_every": 15},
  "metrics": {"pavpu_samples": 4, "stats_samples": 3}})";

}  // namespace

TEST_CASE("config: defaults fill in and the canonical form round-trips") {
  const ExperimentConfig c = parse_config(kMinimal);
  CHECK(c.seed == 4);
  CHECK(c.task.seed == 4);
  CHECK(c.task.kind == TaskKind::kCopy);
  CHECK(c.model.d_model == 64);
  CHECK(c.model.constants.rho == 1.5);
  CHECK(c.model.constants.sigma == 1e-6);
  CHECK(c.train.steps == 10);
  CHECK(c.train.eval_every == 200);
  CHECK(c.metrics.pavpu_samples == 20);
  CHECK(c.metrics.p_threshold == 0.05);
  CHECK(c.metrics.ece_bins == 10);
  const std::string canon = config_to_json(c);
  CHECK(config_to_json(parse_config(canon)) == canon);

  const AttentionConfig ac = parse_config(with(kMinimal, "\"copy\"", "\"retrieval\"")).attention_config();
  CHECK(ac.max_seq_len == 9);
  CHECK(ac.n_classes == 8);
  CHECK(ac.pooling == Pooling::kLast);
  CHECK(ac.output == OutputKind::kClassify);
}

TEST_CASE("config: schema violations name the field path") {
  CHECK(config_error_path(with(kMinimal, "\"seed\": 4,", "")) == "seed");
  CHECK(config_error_path(with(kMinimal, "\"kind\": \"copy\"", "")) == "task.kind");
  CHECK(config_error_path(with(kMinimal, "\"steps\": 10", "")) == "train.steps");
  CHECK(config_error_path(with(kMinimal, "\"steps\": 10", "\"steps\": 10, \"lr\": \"fast\"")) ==
        "train.lr");
  CHECK(config_error_path(with(kMinimal, "\"steps\": 10", "\"steps\": 2.5")) == "train.steps");
  CHECK(config_error_path(with(kMinimal, "\"steps\": 10", "\"steps\": -3")) == "train.steps");
  CHECK(config_error_path(with(kMinimal, "\"deterministic\"", "\"babn\", \"rho\": -1")) == "model");
  CHECK(config_error_path(with(kMinimal, "\"deterministic\"", "\"lstm\"")) == "model.kind");
  CHECK(config_error_path(with(kMinimal, "\"copy\"", "\"copy\", \"colour\": 1")) ==
        "task.colour");
  CHECK(config_error_path(with(kMinimal, "\"version\": 1", "\"version\": 2")) == "version");
  CHECK(config_error_path(with(kMinimal, "\"version\": 1,", "\"extra\": {}, \"version\": 1,")) ==
        "extra");
  CHECK(config_error_path(std::string(kMinimal) + ",") == "<root>");
  CHECK(config_error_path("[1, 2]") == "<root>");
  CHECK(config_error_path(with(kMinimal, "\"train\": {\"steps\": 10}",
                               "\"train\": {\"steps\": 10}, \"metrics\": {\"p_threshold\": 1.5}")) ==
        "metrics.p_threshold");
  CHECK(config_error_path(with(kMinimal, "\"deterministic\"",
                               "\"deterministic\", \"d_model\": 10, \"n_heads\": 4")) ==
        "model.n_heads");
}

TEST_CASE("run_experiment writes every report and reruns byte-identically") {
  const ExperimentConfig cfg = parse_config(kSmallRun);
  const fs::path a = scratch("a"), b = scratch("b");
  const ExperimentResult ra = run_experiment(cfg, a);
  run_experiment(cfg, b);
  for (const char* f : {"model.ckpt.json", "summary.json", "history.csv", "evals.csv",
                        "reliability.csv", "pavpu.csv", "attention_stats.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(ra.history.steps.size() == 30);
  CHECK(ra.history.evals.size() == 2);
  REQUIRE(ra.splits.size() == 4);
  CHECK(ra.split("test_od").count == 60);
  CHECK(ra.split("test_noisy").pavpu_test.has_value());

  const std::string stats = slurp(a / "attention_stats.csv");
  CHECK(stats.rfind("layer,head,query,key,mean,std_over_mean\n", 0) == 0);
  // 1 layer x 2 heads x 10 x 10 entries
  CHECK(std::count(stats.begin(), stats.end(), '\n') == 1 + 200);
  const std::string rel = slurp(a / "reliability.csv");
  CHECK(std::count(rel.begin(), rel.end(), '\n') == 1 + 4 * 10);
  const std::string summary = slurp(a / "summary.json");
  CHECK(summary.find("\"pavpu_method\": \"margin_t_test\"") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("init_from converts a deterministic checkpoint") {
  const fs::path dir = scratch("init");
  std::string det = with(kSmallRun, "\"kind\": \"babn\"", "\"kind\": \"deterministic\"");
  run_experiment(parse_config(det), dir / "det");
  const std::string babn = with(kSmallRun, "\"ffn_hidden\": 16",
                                "\"ffn_hidden\": 16, \"init_from\": \"det/model.ckpt.json\"");
  {
    std::ofstream(dir / "babn.json") << babn;
  }
  const ExperimentConfig c = load_config(dir / "babn.json");
  REQUIRE(c.model.init_from.has_value());
  const Model m = build_model(c);
  CHECK(m.kind() == ModelKind::kBabn);

  const std::string wrong =
      with(babn, "\"d_model\": 16, \"n_heads\": 2", "\"d_model\": 8, \"n_heads\": 2");
  {
    std::ofstream(dir / "wrong.json") << wrong;
  }
  try {
    build_model(load_config(dir / "wrong.json"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "model.init_from");
  }
  fs::remove_all(dir);
}

TEST_CASE("collect_records: shapes, sampled mean, determinism") {
  const ExperimentConfig cfg = parse_config(kSmallRun);
  const TaskSplits d = make_task(cfg.task);
  const Model m = build_model(cfg);
  const RngStream rng(3);
  const auto r = collect_records(m, d.test_id, 5, rng, 20, 8);
  REQUIRE(r.size() == 20);
  for (const auto& p : r) {
    p.validate();
    CHECK(p.samples.size() == 5);
  }
  CHECK(collect_records(m, d.test_id, 5, rng, 20, 8)[7].samples[4] == r[7].samples[4]);
  const auto s = collect_sampled_records(m, d.test_id, 5, rng, 20, 8);
  double mean0 = 0.0;
  for (const auto& v : s[0].samples) mean0 += v[0] / 5.0;
  CHECK(s[0].mean_probs[0] == doctest::Approx(mean0).epsilon(1e-14));
}

TEST_CASE("cli exit codes: 0 ok, 2 schema, 3 divergence") {
  const fs::path dir = scratch("cli");
  std::ofstream(dir / "ok.json") << with(kMinimal, "\"deterministic\"",
                                         "\"deterministic\", \"d_model\": 8, \"n_heads\": 2");
  std::ofstream(dir / "missing.json") << with(kMinimal, "\"steps\": 10", "");
  // rho = 0 with sigma > 0: tiny k pushes lam * Gamma(1 + 1/k) past overflow
  std::ofstream(dir / "diverge.json") << R"({"version": 1, "seed": 1,
    "task": {"kind": "retrieval", "n_train": 200, "n_val": 20, "n_test": 20},
    "model": {"kind": "babn", "rho": 0},
    "train": {"steps": 5}})";
  CHECK(run_cli("train " + (dir / "ok.json").string() + " --out " + (dir / "ok").string()) == 0);
  CHECK(run_cli("train " + (dir / "missing.json").string()) == 2);
  CHECK(run_cli("train " + (dir / "diverge.json").string() + " --out " + (dir / "div").string()) ==
        3);
  CHECK(fs::exists(dir / "div" / "history.csv"));
  CHECK(slurp(dir / "div" / "summary.json").find("\"diverged\": true") != std::string::npos);

  const std::string ck = (dir / "ok" / "model.ckpt.json").string();
  CHECK(run_cli("eval " + (dir / "ok.json").string() + " --ckpt " + ck) == 0);
  CHECK(run_cli("convert --from " + ck + " --to " + (dir / "b.json").string() + " --rho 1") == 0);
  CHECK(run_cli("stats " + (dir / "ok.json").string() + " --ckpt " + (dir / "b.json").string() +
                " --samples 3") == 0);
  CHECK(run_cli("eval " + (dir / "ok.json").string() + " --ckpt " + (dir / "b.json").string() +
                " --mode sample --samples 3") == 0);
  CHECK(run_cli("convert --from " + (dir / "b.json").string() + " --to " +
                (dir / "c.json").string()) == 1);
  fs::remove_all(dir);
}
