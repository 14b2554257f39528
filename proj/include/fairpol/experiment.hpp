#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairpol/data.hpp"
#include "fairpol/fairrep.hpp"
#include "fairpol/nuisance.hpp"
#include "fairpol/policylearn.hpp"

namespace fairpol {

// Flat "key = value" text with dotted section names; '#' starts a comment.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);

// Built-in experiment profiles: "sim61" (simulated study: n=3000, 80/20
// split, gamma=0.5, lambda=0.5) and "csv62" (CSV study: DR, lambda=0.3,
// 70/10/20 split, fitted nuisances). Config entries override the profile.
ConfigMap default_config(const std::string& profile);

struct ExperimentConfig {
  bool simulate_source = true;
  SimConfig sim;
  std::string csv_path;
  CsvSchema schema;

  std::array<double, 3> fractions{0.8, 0.0, 0.2};
  std::uint64_t split_seed = 17;

  bool oracle_nuisance = true;
  NuisanceHyper nuisance;

  bool action_fair = false;
  RepHyper rep;

  PolicyObjectiveSpec objective;
  ScoreMethod method = ScoreMethod::DM;
  PolicyHyper policy;

  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string out_dir;
  int jobs = 1;
  int gap_n_mc = 20000;

  std::string config_id;  // hash of the canonical key/value form

  static ExperimentConfig from_map(const ConfigMap& map);
};

struct SeedOutcome {
  ValueReport test_report;
  double fairness_metric = 0.0;  // af gap (simulated) or Spearman (CSV)
  bool metric_is_gap = true;
  double wall_ms = 0.0;
  TrainedPolicy policy;
  FeatureStats stats;
  std::optional<RepTrainReport> rep_report;
  PolicyTrainReport policy_report;
  ScoreVector test_scores;           // audit export
  NuisanceEstimates test_nuisance;   // audit export
};

// One fully deterministic pipeline run: data, split, standardization,
// nuisances, optional representation step, policy step, test evaluation.
SeedOutcome run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedRow {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  ValueReport report;
  double metric = 0.0;
  double wall_ms = 0.0;
};

struct ResultsTable {
  std::string config_id;
  ScoreMethod method = ScoreMethod::DM;
  PolicyObjectiveSpec objective;
  int group_count = 2;
  std::vector<SeedRow> rows;

  bool all_ok() const;
  // mean then sample-sd rows over the completed seeds.
  std::pair<std::vector<double>, std::vector<double>> aggregate() const;
  std::string to_csv() const;
};

// Runs every seed (in up to cfg.jobs parallel jobs), writes results.csv,
// summary.json and per-seed artifacts under cfg.out_dir, and keeps going
// when individual seeds fail.
ResultsTable run_experiment(const ExperimentConfig& cfg);

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

struct GridTrial {
  int index = 0;
  std::map<std::string, std::string> overrides;
  double score = 0.0;  // stage metric; orientation per GridSearchResult
};

struct GridSearchResult {
  std::vector<GridTrial> trials;
  int best_index = -1;
  std::map<std::string, std::string> best;
  bool minimize = true;
  bool budget_clamped = false;
};

// Uniform sampling without replacement over the grid; selects by the
// validation metric of the stage ("outcome", "propensity", "rep" minimize
// their losses; "policy" maximizes its objective). Equal scores keep the
// earlier trial.
GridSearchResult grid_search(const ConfigMap& base, const std::vector<GridAxis>& grid,
                             const std::string& stage, int budget, std::uint64_t seed);

// App. G-style default tuning grids for a stage.
std::vector<GridAxis> default_grid(const std::string& stage);

}  // namespace fairpol
