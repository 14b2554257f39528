#include "fairpol/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "fairpol/eval_theory.hpp"

namespace fairpol {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(s);
  while (std::getline(ss, field, ',')) {
    field = trim(field);
    if (!field.empty()) out.push_back(field);
  }
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "data.source", "data.n", "data.p_s", "data.noise_sd", "data.csv_path", "data.csv_x",
      "data.csv_s", "data.csv_a", "data.csv_y", "split.train", "split.val", "split.test",
      "split.seed", "nuisance.mode", "nuisance.hidden", "nuisance.lr", "nuisance.epochs",
      "nuisance.batch", "nuisance.dropout", "nuisance.weight_decay", "nuisance.clip",
      "fairness.action_fair", "fairness.gamma", "fairness.value", "fairness.lambda",
      "score.method", "rep.width", "rep.lr", "rep.epochs", "rep.batch", "rep.dropout",
      "rep.weight_decay", "policy.hidden", "policy.lr", "policy.epochs", "policy.batch",
      "policy.dropout", "policy.weight_decay", "seeds", "out", "jobs", "gap.n_mc"};
  return keys;
}

class ConfigReader {
 public:
  explicit ConfigReader(const ConfigMap& map) : map_(map) {}

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = map_.find(key);
    return it == map_.end() ? fallback : it->second;
  }
  double num(const std::string& key, double fallback) const {
    auto it = map_.find(key);
    if (it == map_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' has non-numeric value '" + it->second + "'");
    }
  }
  int integer(const std::string& key, int fallback) const {
    const double v = num(key, fallback);
    if (v != std::floor(v)) throw ConfigError("key '" + key + "' must be an integer");
    return static_cast<int>(v);
  }
  bool flag(const std::string& key, bool fallback) const {
    const std::string v = str(key, fallback ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "' must be true or false");
  }

 private:
  const ConfigMap& map_;
};

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::stringstream ss(text);
  std::string line;
  long lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected 'key = value'", lineno, "-");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno, "-");
    map[key] = value;
  }
  return map;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ConfigMap default_config(const std::string& profile) {
  ConfigMap map = {
      {"data.source", "simulate"}, {"data.n", "3000"},        {"data.p_s", "0.5"},
      {"data.noise_sd", "0.1"},    {"split.train", "0.8"},    {"split.val", "0"},
      {"split.test", "0.2"},       {"split.seed", "17"},      {"nuisance.mode", "oracle"},
      {"nuisance.hidden", "32"},   {"nuisance.lr", "0.001"},  {"nuisance.epochs", "200"},
      {"nuisance.batch", "64"},    {"nuisance.dropout", "0"}, {"nuisance.weight_decay", "0"},
      {"nuisance.clip", "0.05"},   {"fairness.action_fair", "false"},
      {"fairness.gamma", "0.5"},   {"fairness.value", "none"}, {"fairness.lambda", "0.5"},
      {"score.method", "DM"},      {"rep.width", "5"},        {"rep.lr", "0.001"},
      {"rep.epochs", "400"},       {"rep.batch", "64"},       {"rep.dropout", "0"},
      {"rep.weight_decay", "0"},   {"policy.hidden", "10"},   {"policy.lr", "0.001"},
      {"policy.epochs", "400"},    {"policy.batch", "64"},    {"policy.dropout", "0"},
      {"policy.weight_decay", "0"}, {"seeds", "1,2,3,4,5"},   {"jobs", "1"},
      {"gap.n_mc", "20000"}};
  if (profile == "sim61" || profile.empty()) return map;
  if (profile == "csv62") {
    map["data.source"] = "csv";
    map["split.train"] = "0.7";
    map["split.val"] = "0.1";
    map["split.test"] = "0.2";
    map["nuisance.mode"] = "fitted";
    map["score.method"] = "DR";
    map["fairness.lambda"] = "0.3";
    return map;
  }
  throw ConfigError("unknown profile '" + profile + "'");
}

ExperimentConfig ExperimentConfig::from_map(const ConfigMap& map) {
  for (const auto& [key, value] : map) {
    (void)value;
    if (known_keys().find(key) == known_keys().end())
      throw ConfigError("unknown config key '" + key + "'");
  }
  ConfigReader r(map);
  ExperimentConfig cfg;

  const std::string source = r.str("data.source", "simulate");
  if (source == "simulate") {
    cfg.simulate_source = true;
  } else if (source == "csv") {
    cfg.simulate_source = false;
  } else {
    throw ConfigError("data.source must be simulate or csv");
  }
  cfg.sim.n = r.integer("data.n", 3000);
  cfg.sim.p_s = r.num("data.p_s", 0.5);
  cfg.sim.noise_sd = r.num("data.noise_sd", 0.1);
  cfg.csv_path = r.str("data.csv_path", "");
  cfg.schema.x_columns = split_list(r.str("data.csv_x", ""));
  cfg.schema.s_column = r.str("data.csv_s", "s");
  cfg.schema.a_column = r.str("data.csv_a", "a");
  cfg.schema.y_column = r.str("data.csv_y", "y");
  if (!cfg.simulate_source && cfg.csv_path.empty())
    throw ConfigError("csv source needs data.csv_path");

  cfg.fractions = {r.num("split.train", 0.8), r.num("split.val", 0.0), r.num("split.test", 0.2)};
  cfg.split_seed = static_cast<std::uint64_t>(r.num("split.seed", 17));

  const std::string mode = r.str("nuisance.mode", "oracle");
  if (mode == "oracle") {
    cfg.oracle_nuisance = true;
  } else if (mode == "fitted") {
    cfg.oracle_nuisance = false;
  } else {
    throw ConfigError("nuisance.mode must be oracle or fitted");
  }
  if (cfg.oracle_nuisance && !cfg.simulate_source)
    throw ConfigError("oracle nuisances require simulated data");
  cfg.nuisance.hidden = r.integer("nuisance.hidden", 32);
  cfg.nuisance.lr = r.num("nuisance.lr", 1e-3);
  cfg.nuisance.epochs = r.integer("nuisance.epochs", 200);
  cfg.nuisance.batch = r.integer("nuisance.batch", 64);
  cfg.nuisance.dropout = r.num("nuisance.dropout", 0.0);
  cfg.nuisance.weight_decay = r.num("nuisance.weight_decay", 0.0);
  cfg.nuisance.clip = r.num("nuisance.clip", 0.05);

  cfg.action_fair = r.flag("fairness.action_fair", false);
  cfg.rep.gamma = r.num("fairness.gamma", 0.5);
  if (cfg.rep.gamma < 0.0) throw ConfigError("gamma must be nonnegative");
  cfg.rep.width = r.integer("rep.width", 5);
  cfg.rep.lr = r.num("rep.lr", 1e-3);
  cfg.rep.epochs = r.integer("rep.epochs", 400);
  cfg.rep.batch = r.integer("rep.batch", 64);
  cfg.rep.dropout = r.num("rep.dropout", 0.0);
  cfg.rep.weight_decay = r.num("rep.weight_decay", 0.0);

  const std::string value = r.str("fairness.value", "none");
  const double lambda = r.num("fairness.lambda", 0.5);
  if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  if (value == "none") {
    cfg.objective = {ValueObjective::Unrestricted, 0.0};
  } else if (value == "envy_free") {
    cfg.objective = {ValueObjective::EnvyFree, lambda};
  } else if (value == "max_min") {
    cfg.objective = {ValueObjective::MaxMin, 0.0};
  } else {
    throw ConfigError("fairness.value must be none, envy_free or max_min");
  }
  cfg.method = score_method_from_string(r.str("score.method", "DM"));

  cfg.policy.hidden = r.integer("policy.hidden", 10);
  cfg.policy.lr = r.num("policy.lr", 1e-3);
  cfg.policy.epochs = r.integer("policy.epochs", 400);
  cfg.policy.batch = r.integer("policy.batch", 64);
  cfg.policy.dropout = r.num("policy.dropout", 0.0);
  cfg.policy.weight_decay = r.num("policy.weight_decay", 0.0);

  cfg.seeds.clear();
  for (const std::string& s : split_list(r.str("seeds", "1,2,3,4,5")))
    cfg.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
  if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
  cfg.out_dir = r.str("out", "");
  cfg.jobs = r.integer("jobs", 1);
  if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  cfg.gap_n_mc = r.integer("gap.n_mc", 20000);

  std::string canon;
  for (const auto& [key, v] : map) canon += key + "=" + v + "\n";
  cfg.config_id = fnv1a_hex(canon);
  return cfg;
}

namespace {

struct PipelineData {
  Dataset train, val, test;
  NuisanceEstimates nuis_train, nuis_val, nuis_test;
  FeatureStats stats;
  SimConfig sim;
  bool simulated = true;
};

PipelineData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  PipelineData out;
  out.simulated = cfg.simulate_source;

  Dataset raw;
  SimOracle oracle;
  if (cfg.simulate_source) {
    out.sim = cfg.sim;
    out.sim.seed = seed;
    auto [ds, orc] = simulate(out.sim);
    raw = std::move(ds);
    oracle = orc;
  } else {
    raw = load_csv(cfg.csv_path, cfg.schema).data;
  }

  SplitResult sp = split(raw, cfg.fractions, derive_seed(cfg.split_seed, seed));
  if (cfg.oracle_nuisance) {
    // Oracle formulas read the raw covariates, so evaluate before scaling.
    out.nuis_train = oracle_nuisance(sp.train, oracle);
    if (sp.val.n() > 0) out.nuis_val = oracle_nuisance(sp.val, oracle);
    out.nuis_test = oracle_nuisance(sp.test, oracle);
  }

  StandardizeResult std_res = standardize(sp.train, {sp.val, sp.test});
  out.train = std::move(std_res.train);
  out.val = std::move(std_res.others[0]);
  out.test = std::move(std_res.others[1]);
  out.stats = std::move(std_res.stats);

  if (!cfg.oracle_nuisance) {
    NuisanceHyper hyper = cfg.nuisance;
    hyper.seed = derive_seed(seed, 60);
    const OutcomeModel outcome = fit_outcome_model(out.train, hyper);
    const PropensityModel propensity = fit_propensity(out.train, hyper);
    out.nuis_train = predict_nuisance(outcome, propensity, out.train);
    if (out.val.n() > 0) out.nuis_val = predict_nuisance(outcome, propensity, out.val);
    out.nuis_test = predict_nuisance(outcome, propensity, out.test);
  }
  return out;
}

}  // namespace

SeedOutcome run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineData data = prepare_data(cfg, seed);

  SeedOutcome out;
  out.stats = data.stats;

  PolicyTrainSpec spec;
  spec.objective = cfg.objective;
  spec.method = cfg.method;
  if (cfg.action_fair) {
    RepHyper rep = cfg.rep;
    rep.seed = derive_seed(seed, 40);
    auto [model, report] = train_fair_representation(data.train, data.val, rep);
    out.rep_report = std::move(report);
    spec.front_end = std::move(model.phi);
    spec.use_sensitive = false;
  }

  PolicyHyper hyper = cfg.policy;
  hyper.seed = derive_seed(seed, 41);
  auto [policy, report] = train_policy(data.train, data.val.n() > 0 ? &data.val : nullptr,
                                       data.nuis_train, data.val.n() > 0 ? &data.nuis_val : nullptr,
                                       spec, hyper);
  out.policy = std::move(policy);
  out.policy_report = std::move(report);

  out.test_report = evaluate_policy(out.policy, data.test, data.nuis_test, cfg.method);
  out.test_scores =
      score(cfg.method, out.policy.predict(data.test.x, data.test.s), data.test, data.nuis_test);
  out.test_nuisance = data.nuis_test;
  if (data.simulated) {
    out.metric_is_gap = true;
    out.fairness_metric = action_fairness_gap_sim(out.policy, data.sim, cfg.gap_n_mc,
                                                  derive_seed(seed, 42), &out.stats);
  } else {
    out.metric_is_gap = false;
    out.fairness_metric = spearman_rank(data.test.s.cast<double>(),
                                        out.policy.predict(data.test.x, data.test.s));
  }

  const auto t1 = std::chrono::steady_clock::now();
  out.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return out;
}

bool ResultsTable::all_ok() const {
  for (const SeedRow& row : rows)
    if (!row.ok) return false;
  return !rows.empty();
}

std::pair<std::vector<double>, std::vector<double>> ResultsTable::aggregate() const {
  std::vector<std::vector<double>> cols;  // v_hat, per-group values, metric
  for (const SeedRow& row : rows) {
    if (!row.ok) continue;
    std::vector<double> vals;
    vals.push_back(row.report.v_hat);
    for (int g = 0; g < row.report.v_by_group.size(); ++g)
      vals.push_back(row.report.v_by_group(g));
    vals.push_back(row.metric);
    if (cols.empty()) cols.resize(vals.size());
    for (std::size_t j = 0; j < vals.size(); ++j) cols[j].push_back(vals[j]);
  }
  std::vector<double> mean, sd;
  for (const auto& col : cols) {
    const double m = std::accumulate(col.begin(), col.end(), 0.0) / col.size();
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    mean.push_back(m);
    sd.push_back(col.size() > 1 ? std::sqrt(ss / (col.size() - 1))
                                : std::numeric_limits<double>::quiet_NaN());
  }
  return {mean, sd};
}

std::string ResultsTable::to_csv() const {
  std::string out = "config_id,seed,method,objective";
  out += ",v_hat";
  for (int g = 0; g < group_count; ++g) out += ",v_hat_s" + std::to_string(g);
  out += ",af_gap_or_spearman,wall_ms\n";

  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const std::string obj = to_string(objective.kind);
  const std::string met = to_string(method);
  for (const SeedRow& row : rows) {
    if (!row.ok) continue;
    out += config_id + "," + std::to_string(row.seed) + "," + met + "," + obj;
    out += "," + num(row.report.v_hat);
    for (int g = 0; g < group_count; ++g) out += "," + num(row.report.v_by_group(g));
    out += "," + num(row.metric) + "," + num(row.wall_ms) + "\n";
  }
  const auto [mean, sd] = aggregate();
  if (!mean.empty()) {
    auto emit = [&](const char* tag, const std::vector<double>& vals, double wall) {
      out += config_id + "," + tag + "," + met + "," + obj;
      for (double v : vals) out += "," + num(v);
      out += "," + num(wall) + "\n";
    };
    double wall_mean = 0.0;
    int ok = 0;
    for (const SeedRow& row : rows)
      if (row.ok) {
        wall_mean += row.wall_ms;
        ++ok;
      }
    wall_mean /= ok;
    double wall_ss = 0.0;
    for (const SeedRow& row : rows)
      if (row.ok) wall_ss += (row.wall_ms - wall_mean) * (row.wall_ms - wall_mean);
    const double wall_sd =
        ok > 1 ? std::sqrt(wall_ss / (ok - 1)) : std::numeric_limits<double>::quiet_NaN();
    emit("mean", mean, wall_mean);
    emit("sd", sd, wall_sd);
  }
  return out;
}

ResultsTable run_experiment(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("run_experiment needs an output directory");
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  ResultsTable table;
  table.config_id = cfg.config_id;
  table.method = cfg.method;
  table.objective = cfg.objective;
  table.rows.resize(cfg.seeds.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfg.seeds.size()) return;
      SeedRow& row = table.rows[i];
      row.seed = cfg.seeds[i];
      try {
        SeedOutcome outcome = run_pipeline(cfg, row.seed);
        row.ok = true;
        row.report = outcome.test_report;
        row.metric = outcome.fairness_metric;
        row.wall_ms = outcome.wall_ms;

        const fs::path dir = fs::path(cfg.out_dir) / ("seed_" + std::to_string(row.seed));
        fs::create_directories(dir);
        nlohmann::json snap;
        snap["config_id"] = cfg.config_id;
        snap["policy"] = nlohmann::json::parse(outcome.policy.to_json());
        snap["stats"] = {{"mean", std::vector<double>(outcome.stats.mean.data(),
                                                      outcome.stats.mean.data() +
                                                          outcome.stats.mean.size())},
                         {"sd", std::vector<double>(outcome.stats.sd.data(),
                                                    outcome.stats.sd.data() +
                                                        outcome.stats.sd.size())},
                         {"constant", outcome.stats.constant}};
        std::ofstream(dir / "policy.json") << snap.dump(2) << "\n";
        write_policy_trace_csv(outcome.policy_report, (dir / "policy_trace.csv").string());
        if (outcome.rep_report)
          write_rep_trace_csv(*outcome.rep_report, (dir / "rep_trace.csv").string());
        write_scores_csv(outcome.test_scores, (dir / "scores_test.csv").string());
        write_nuisance_csv(outcome.test_nuisance, (dir / "nuisance_test.csv").string());
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };

  const int jobs = std::min<int>(cfg.jobs, static_cast<int>(cfg.seeds.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  if (!table.rows.empty() && table.rows.front().ok)
    table.group_count = static_cast<int>(table.rows.front().report.v_by_group.size());
  else
    for (const SeedRow& row : table.rows)
      if (row.ok) table.group_count = static_cast<int>(row.report.v_by_group.size());

  std::ofstream(fs::path(cfg.out_dir) / "results.csv") << table.to_csv();

  nlohmann::json summary;
  summary["config_id"] = cfg.config_id;
  summary["method"] = to_string(cfg.method);
  summary["objective"] = to_string(cfg.objective.kind);
  summary["lambda"] = cfg.objective.lambda;
  nlohmann::json rows = nlohmann::json::array();
  for (const SeedRow& row : table.rows) {
    nlohmann::json jr;
    jr["seed"] = row.seed;
    jr["ok"] = row.ok;
    if (row.ok) {
      jr["v_hat"] = row.report.v_hat;
      jr["v_by_group"] = std::vector<double>(row.report.v_by_group.data(),
                                             row.report.v_by_group.data() +
                                                 row.report.v_by_group.size());
      jr["p_by_group"] = std::vector<double>(row.report.p_by_group.data(),
                                             row.report.p_by_group.data() +
                                                 row.report.p_by_group.size());
      jr["af_gap_or_spearman"] = row.metric;
    } else {
      jr["error"] = row.error;
    }
    rows.push_back(std::move(jr));
  }
  summary["rows"] = std::move(rows);
  const auto [mean, sd] = table.aggregate();
  summary["aggregate_mean"] = mean;
  summary["aggregate_sd"] = sd;
  std::ofstream(fs::path(cfg.out_dir) / "summary.json") << summary.dump(2) << "\n";

  return table;
}

std::vector<GridAxis> default_grid(const std::string& stage) {
  const GridAxis dropout{"", {"0", "0.1", "0.2"}};
  const GridAxis batch{"", {"32", "64", "128"}};
  if (stage == "rep") {
    return {{"rep.dropout", dropout.values},
            {"rep.batch", batch.values},
            {"rep.lr", {"0.0001", "0.0005", "0.001", "0.005"}},
            {"rep.width", {"2", "5", "10"}},
            {"rep.weight_decay", {"0", "0.001"}}};
  }
  if (stage == "policy") {
    return {{"policy.dropout", dropout.values},
            {"policy.batch", batch.values},
            {"policy.lr", {"0.00005", "0.0001", "0.0005", "0.001"}},
            {"policy.hidden", {"5", "10", "15", "20"}}};
  }
  if (stage == "outcome" || stage == "propensity") {
    return {{"nuisance.dropout", dropout.values},
            {"nuisance.batch", batch.values},
            {"nuisance.lr", {"0.0001", "0.0005", "0.001", "0.005"}},
            {"nuisance.hidden", {"5", "10", "20", "30"}}};
  }
  throw ConfigError("unknown grid stage '" + stage + "'");
}

GridSearchResult grid_search(const ConfigMap& base, const std::vector<GridAxis>& grid,
                             const std::string& stage, int budget, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("grid must be non-empty");
  if (budget < 1) throw ConfigError("budget must be >= 1");
  for (const GridAxis& axis : grid)
    if (axis.values.empty()) throw ConfigError("grid axis '" + axis.key + "' has no values");

  long long total = 1;
  for (const GridAxis& axis : grid) total *= static_cast<long long>(axis.values.size());

  GridSearchResult result;
  if (budget > total) {
    budget = static_cast<int>(total);
    result.budget_clamped = true;
  }
  result.minimize = stage != "policy";

  std::vector<long long> picks(static_cast<std::size_t>(total));
  std::iota(picks.begin(), picks.end(), 0);
  Rng rng = make_rng(derive_seed(seed, 50));
  std::shuffle(picks.begin(), picks.end(), rng);
  picks.resize(static_cast<std::size_t>(budget));

  const ExperimentConfig probe = ExperimentConfig::from_map(base);
  if (probe.fractions[1] <= 0.0) throw ConfigError("grid search needs a validation split > 0");
  const std::uint64_t data_seed = probe.seeds.front();

  for (int t = 0; t < budget; ++t) {
    long long code = picks[static_cast<std::size_t>(t)];
    ConfigMap trial_map = base;
    GridTrial trial;
    trial.index = t;
    for (const GridAxis& axis : grid) {
      const auto k = static_cast<std::size_t>(code % static_cast<long long>(axis.values.size()));
      code /= static_cast<long long>(axis.values.size());
      trial_map[axis.key] = axis.values[k];
      trial.overrides[axis.key] = axis.values[k];
    }
    const ExperimentConfig cfg = ExperimentConfig::from_map(trial_map);
    PipelineData data = prepare_data(cfg, data_seed);
    if (data.val.n() == 0) throw ConfigError("grid search needs a validation split > 0");

    double score = 0.0;
    if (stage == "outcome") {
      NuisanceHyper hyper = cfg.nuisance;
      hyper.seed = derive_seed(data_seed, 60);
      const OutcomeModel model = fit_outcome_model(data.train, hyper);
      auto [mu0, mu1] = model.predict(data.val.x, data.val.s);
      double mse = 0.0;
      for (int i = 0; i < data.val.n(); ++i) {
        const double pred = data.val.a(i) == 1 ? mu1(i) : mu0(i);
        mse += (pred - data.val.y(i)) * (pred - data.val.y(i));
      }
      score = mse / data.val.n();
    } else if (stage == "propensity") {
      NuisanceHyper hyper = cfg.nuisance;
      hyper.seed = derive_seed(data_seed, 60);
      const PropensityModel model = fit_propensity(data.train, hyper);
      const VectorXd p = model.predict(data.val.x, data.val.s);
      double loss = 0.0;
      for (int i = 0; i < data.val.n(); ++i)
        loss -= data.val.a(i) == 1 ? std::log(p(i)) : std::log(1.0 - p(i));
      score = loss / data.val.n();
    } else if (stage == "rep") {
      RepHyper hyper = cfg.rep;
      hyper.seed = derive_seed(data_seed, 40);
      auto [model, report] = train_fair_representation(data.train, data.val, hyper);
      score = outcome_loss(model, data.val.x, data.val.y) +
              hyper.gamma * confusion_loss(model, data.val.x);
    } else if (stage == "policy") {
      SeedOutcome outcome;
      ExperimentConfig run_cfg = cfg;
      run_cfg.seeds = {data_seed};
      outcome = run_pipeline(run_cfg, data_seed);
      const std::size_t last = outcome.policy_report.val_objective.size() - 1;
      score = outcome.policy_report.val_objective[last];
      if (!std::isfinite(score))
        throw EstimationError("policy grid search needs a usable validation objective");
    } else {
      throw ConfigError("unknown grid stage '" + stage + "'");
    }

    trial.score = score;
    result.trials.push_back(trial);
    const bool better =
        result.best_index < 0 ||
        (result.minimize ? score < result.trials[static_cast<std::size_t>(result.best_index)].score
                         : score > result.trials[static_cast<std::size_t>(result.best_index)].score);
    if (better) {
      result.best_index = t;
      result.best = trial.overrides;
    }
  }
  return result;
}

}  // namespace fairpol
