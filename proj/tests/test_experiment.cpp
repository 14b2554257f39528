#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fairpol/experiment.hpp"

using namespace fairpol;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// results.csv with the volatile wall_ms column (the last one) blanked.
std::string stable_csv(const fs::path& path) {
  std::stringstream in(slurp(path));
  std::string line, out;
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    out += line.substr(0, cut) + "\n";
  }
  return out;
}

ConfigMap quick_map(const std::string& out_dir) {
  ConfigMap map = default_config("sim61");
  map["data.n"] = "400";
  map["split.train"] = "0.7";
  map["split.val"] = "0.1";
  map["split.test"] = "0.2";
  map["policy.epochs"] = "25";
  map["policy.hidden"] = "6";
  map["rep.epochs"] = "15";
  map["rep.width"] = "3";
  map["seeds"] = "1,2";
  map["gap.n_mc"] = "2000";
  map["out"] = out_dir;
  return map;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config text parsing") {
  const ConfigMap map = parse_config_text("a.b = 1\n# comment\n  c.d= x y \n\ne.f =2 # tail\n");
  CHECK(map.at("a.b") == "1");
  CHECK(map.at("c.d") == "x y");
  CHECK(map.at("e.f") == "2");
  CHECK_THROWS_AS(parse_config_text("not a pair\n"), ParseError);
}

TEST_CASE("profiles and overrides") {
  const ConfigMap sim = default_config("sim61");
  CHECK(sim.at("data.n") == "3000");
  CHECK(sim.at("fairness.gamma") == "0.5");
  const ConfigMap csv = default_config("csv62");
  CHECK(csv.at("score.method") == "DR");
  CHECK(csv.at("fairness.lambda") == "0.3");
  CHECK(csv.at("split.val") == "0.1");
  CHECK_THROWS_AS(default_config("nope"), ConfigError);
}

TEST_CASE("config validation") {
  ConfigMap map = default_config("sim61");
  map["bogus.key"] = "1";
  CHECK_THROWS_AS(ExperimentConfig::from_map(map), ConfigError);

  map = default_config("sim61");
  map["data.source"] = "csv";  // csv without a path
  CHECK_THROWS_AS(ExperimentConfig::from_map(map), ConfigError);

  map = default_config("csv62");
  map["data.csv_path"] = "/tmp/whatever.csv";
  map["nuisance.mode"] = "oracle";  // oracle nuisances need the simulator
  CHECK_THROWS_AS(ExperimentConfig::from_map(map), ConfigError);

  map = default_config("sim61");
  map["policy.lr"] = "fast";
  CHECK_THROWS_AS(ExperimentConfig::from_map(map), ConfigError);
}

TEST_CASE("config ids are canonical") {
  ConfigMap a = default_config("sim61");
  ConfigMap b = default_config("sim61");
  CHECK(ExperimentConfig::from_map(a).config_id == ExperimentConfig::from_map(b).config_id);
  b["data.n"] = "2999";
  CHECK(ExperimentConfig::from_map(a).config_id != ExperimentConfig::from_map(b).config_id);
}

TEST_CASE("experiment runs are reproducible byte for byte") {
  const fs::path dir1 = fresh_dir("fairpol_exp_a");
  const fs::path dir2 = fresh_dir("fairpol_exp_b");

  ConfigMap map = quick_map(dir1.string());
  const ResultsTable t1 = run_experiment(ExperimentConfig::from_map(map));
  REQUIRE(t1.all_ok());

  map["out"] = dir2.string();
  map["jobs"] = "2";  // parallel jobs must not change any output byte
  const ResultsTable t2 = run_experiment(ExperimentConfig::from_map(map));
  REQUIRE(t2.all_ok());

  CHECK(stable_csv(dir1 / "results.csv") == stable_csv(dir2 / "results.csv"));
  CHECK(slurp(dir1 / "summary.json") == slurp(dir2 / "summary.json"));
  CHECK(slurp(dir1 / "seed_1" / "policy.json") == slurp(dir2 / "seed_1" / "policy.json"));
  CHECK(slurp(dir1 / "seed_1" / "policy_trace.csv") == slurp(dir2 / "seed_1" / "policy_trace.csv"));
  CHECK(slurp(dir1 / "seed_2" / "scores_test.csv") == slurp(dir2 / "seed_2" / "scores_test.csv"));
}

TEST_CASE("aggregate columns recompute from the per-seed rows") {
  const fs::path dir = fresh_dir("fairpol_exp_agg");
  const ResultsTable table = run_experiment(ExperimentConfig::from_map(quick_map(dir.string())));
  REQUIRE(table.all_ok());
  const auto [mean, sd] = table.aggregate();

  double v = 0.0;
  for (const SeedRow& row : table.rows) v += row.report.v_hat;
  v /= static_cast<double>(table.rows.size());
  CHECK(std::abs(mean[0] - v) <= 1e-12);

  double ss = 0.0;
  for (const SeedRow& row : table.rows) ss += (row.report.v_hat - v) * (row.report.v_hat - v);
  CHECK(std::abs(sd[0] - std::sqrt(ss / (table.rows.size() - 1))) <= 1e-12);
}

TEST_CASE("action-fair runs produce s-blind policies") {
  const fs::path dir = fresh_dir("fairpol_exp_af");
  ConfigMap map = quick_map(dir.string());
  map["fairness.action_fair"] = "true";
  map["seeds"] = "3";
  const ExperimentConfig cfg = ExperimentConfig::from_map(map);
  const SeedOutcome outcome = run_pipeline(cfg, 3);

  Rng rng = make_rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd probes(100, 2);
  for (int i = 0; i < 100; ++i) {
    probes(i, 0) = u(rng);
    probes(i, 1) = u(rng);
  }
  const Eigen::VectorXd p0 = outcome.policy.predict(probes, Eigen::VectorXi::Zero(100));
  const Eigen::VectorXd p1 = outcome.policy.predict(probes, Eigen::VectorXi::Ones(100));
  CHECK(p0 == p1);
  CHECK(outcome.rep_report.has_value());
}

TEST_CASE("seed failures are recorded and do not abort the run") {
  const fs::path dir = fresh_dir("fairpol_exp_err");
  ConfigMap map = default_config("csv62");
  map["data.csv_path"] = "/nonexistent/data.csv";
  map["data.csv_x"] = "x1";
  map["seeds"] = "1,2,3";
  map["out"] = dir.string();
  const ResultsTable table = run_experiment(ExperimentConfig::from_map(map));
  CHECK_FALSE(table.all_ok());
  for (const SeedRow& row : table.rows) {
    CHECK_FALSE(row.ok);
    CHECK_FALSE(row.error.empty());
  }
  CHECK(fs::exists(dir / "summary.json"));
}

TEST_CASE("csv pipeline reports a spearman metric") {
  // export simulated data, then run the csv profile on it
  SimConfig sim;
  sim.n = 500;
  sim.seed = 31;
  auto [ds, oracle] = simulate(sim);
  const fs::path csv = fs::temp_directory_path() / "fairpol_exp_data.csv";
  write_csv(ds, csv.string());

  ConfigMap map = default_config("csv62");
  map["data.csv_path"] = csv.string();
  map["data.csv_x"] = "x_u,x_s";
  map["nuisance.epochs"] = "40";
  map["nuisance.hidden"] = "8";
  map["policy.epochs"] = "15";
  map["policy.hidden"] = "5";
  map["seeds"] = "1";
  const ExperimentConfig cfg = ExperimentConfig::from_map(map);
  const SeedOutcome outcome = run_pipeline(cfg, 1);
  CHECK_FALSE(outcome.metric_is_gap);
  CHECK(outcome.fairness_metric >= -1.0);
  CHECK(outcome.fairness_metric <= 1.0);
  CHECK(outcome.test_report.p_by_group.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("grid search basics") {
  ConfigMap base = quick_map(fresh_dir("fairpol_grid").string());
  base["policy.epochs"] = "8";

  SUBCASE("a single-cell grid returns that configuration") {
    const GridSearchResult res =
        grid_search(base, {{"policy.lr", {"0.002"}}}, "policy", 5, 1);
    CHECK(res.budget_clamped);
    CHECK(res.trials.size() == 1);
    CHECK(res.best.at("policy.lr") == "0.002");
  }

  SUBCASE("ties keep the earlier trial") {
    // identical values in the axis force identical scores
    const GridSearchResult res =
        grid_search(base, {{"policy.lr", {"0.002", "0.002"}}}, "policy", 2, 2);
    CHECK(res.trials.size() == 2);
    CHECK(res.best_index == 0);
  }

  SUBCASE("nuisance stages minimize their validation losses") {
    const GridSearchResult res = grid_search(
        base, {{"nuisance.hidden", {"4", "8"}}, {"nuisance.epochs", {"10"}}}, "outcome", 2, 3);
    CHECK(res.minimize);
    CHECK(res.trials.size() == 2);
    const double best = res.trials[static_cast<std::size_t>(res.best_index)].score;
    for (const GridTrial& t : res.trials) CHECK(best <= t.score);
  }

  SUBCASE("validation split is required") {
    ConfigMap noval = base;
    noval["split.train"] = "0.8";
    noval["split.val"] = "0";
    noval["split.test"] = "0.2";
    CHECK_THROWS_AS(grid_search(noval, {{"policy.lr", {"0.001"}}}, "policy", 1, 4), ConfigError);
  }
}

TEST_CASE("default tuning grids match the documented ranges") {
  const auto rep = default_grid("rep");
  bool found = false;
  for (const GridAxis& axis : rep)
    if (axis.key == "rep.width") {
      found = true;
      CHECK(axis.values == std::vector<std::string>{"2", "5", "10"});
    }
  CHECK(found);
  CHECK_THROWS_AS(default_grid("nothing"), ConfigError);
}

}  // TEST_SUITE
