#include "fairpol/eval_theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace fairpol {

using Eigen::VectorXd;
using Eigen::VectorXi;

void ToyProblem::validate() const {
  if (cells.empty()) throw ConfigError("toy problem has no cells");
  double total = 0.0;
  std::set<std::pair<int, int>> seen;
  for (const ToyCell& c : cells) {
    if (c.prob < 0.0) throw ConfigError("cell probabilities must be nonnegative");
    if (c.s < 0) throw ConfigError("group ids must be nonnegative");
    if (!seen.emplace(c.s, c.x_level).second) throw ConfigError("duplicate (s, x) cell");
    total += c.prob;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("cell probabilities must sum to 1");
}

int ToyProblem::group_count() const {
  int g = 0;
  for (const ToyCell& c : cells) g = std::max(g, c.s + 1);
  return g;
}

std::vector<int> ToyProblem::levels() const {
  std::set<int> lv;
  for (const ToyCell& c : cells) lv.insert(c.x_level);
  return {lv.begin(), lv.end()};
}

ToyProblem ToyProblem::table4() {
  // (s, x, prob, mu1, mu0); s: 0=female, 1=male; x: 0=low GPA, 1=high GPA.
  ToyProblem toy;
  toy.cells = {{0, 0, 0.1, 0.0, 1.0},
               {1, 0, 0.4, 0.0, 1.0},
               {0, 1, 0.1, -1.0, 1.0},
               {1, 1, 0.4, 1.0, 0.0}};
  return toy;
}

ToyProblem ToyProblem::table5() {
  ToyProblem toy;
  toy.cells = {{0, 0, 0.1, 0.0, -1.0},
               {1, 0, 0.4, 1.0, 0.0},
               {0, 1, 0.1, 0.0, -1.0},
               {1, 1, 0.4, 2.0, 0.0}};
  return toy;
}

ToyProblem ToyProblem::from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file '" + path + "'", 0, "-");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty toy file", 0, "-");
  ToyProblem toy;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    ToyCell c;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &c.s, &c.x_level, &c.prob, &c.mu1,
                    &c.mu0) != 5)
      throw ParseError("expected 's,x,prob,mu1,mu0'", row, "-");
    toy.cells.push_back(c);
  }
  toy.validate();
  return toy;
}

void ToyProblem::to_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << "s,x,prob,mu1,mu0\n";
  char buf[160];
  for (const ToyCell& c : cells) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g\n", c.s, c.x_level, c.prob, c.mu1,
                  c.mu0);
    out << buf;
  }
}

ToyValues toy_conditional_values(const ToyProblem& toy, const ToyPolicy& policy) {
  if (policy.size() != toy.cells.size())
    throw ShapeError("policy must assign a value to every cell");
  const int groups = toy.group_count();
  VectorXd p_s = VectorXd::Zero(groups);
  VectorXi cells_per_group = VectorXi::Zero(groups);
  for (const ToyCell& c : toy.cells) {
    p_s(c.s) += c.prob;
    ++cells_per_group(c.s);
  }
  ToyValues out;
  out.v_by_group = VectorXd::Zero(groups);
  for (std::size_t i = 0; i < toy.cells.size(); ++i) {
    const ToyCell& c = toy.cells[i];
    const double pi = policy[i];
    if (pi < 0.0 || pi > 1.0) throw UsageError("toy policy value outside [0,1]");
    const double payoff = pi * c.mu1 + (1.0 - pi) * c.mu0;
    // per-level sum convention: weight L_s * P(cell|s)
    const double w =
        p_s(c.s) > 0.0 ? cells_per_group(c.s) * (c.prob / p_s(c.s)) : 0.0;
    out.v_by_group(c.s) += w * payoff;
  }
  out.v = 0.0;
  for (int g = 0; g < groups; ++g) out.v += p_s(g) * out.v_by_group(g);
  return out;
}

namespace {

double toy_objective(const ToyValues& vals, const PolicyObjectiveSpec& spec) {
  switch (spec.kind) {
    case ValueObjective::Unrestricted:
      return vals.v;
    case ValueObjective::EnvyFree:
      return vals.v - spec.lambda * (vals.v_by_group.maxCoeff() - vals.v_by_group.minCoeff());
    case ValueObjective::MaxMin:
      return vals.v_by_group.minCoeff();
  }
  throw UsageError("unknown objective");
}

int grid_steps(double grid_step) {
  if (grid_step <= 0.0 || grid_step > 1.0) throw ConfigError("grid step must be in (0,1]");
  const double steps = 1.0 / grid_step;
  const int k = static_cast<int>(std::llround(steps));
  if (std::abs(steps - k) > 1e-9) throw ConfigError("grid step must divide 1");
  return k;
}

constexpr double kTieEps = 1e-12;

// Enumerates policies over `dims` grid variables in lexicographic order and
// keeps the best under `better`.
template <typename Eval>
void enumerate_grid(int dims, int steps, const Eval& eval) {
  std::vector<int> idx(static_cast<std::size_t>(dims), 0);
  for (;;) {
    eval(idx);
    int d = dims - 1;
    while (d >= 0 && idx[static_cast<std::size_t>(d)] == steps) {
      idx[static_cast<std::size_t>(d)] = 0;
      --d;
    }
    if (d < 0) break;
    ++idx[static_cast<std::size_t>(d)];
    int dd = d;
    // carry handled above; nothing else to do
    (void)dd;
  }
}

}  // namespace

BruteForceResult brute_force_toy_search(const ToyProblem& toy, const PolicyObjectiveSpec& objective,
                                        double grid_step, bool af_constrained) {
  toy.validate();
  const int steps = grid_steps(grid_step);
  const std::vector<int> levels = toy.levels();

  // Map each grid variable onto the cells it controls.
  std::vector<std::vector<std::size_t>> owned;
  if (af_constrained) {
    owned.resize(levels.size());
    for (std::size_t i = 0; i < toy.cells.size(); ++i) {
      const auto it = std::find(levels.begin(), levels.end(), toy.cells[i].x_level);
      owned[static_cast<std::size_t>(it - levels.begin())].push_back(i);
    }
  } else {
    owned.resize(toy.cells.size());
    for (std::size_t i = 0; i < toy.cells.size(); ++i) owned[i].push_back(i);
  }

  const int dims = static_cast<int>(owned.size());
  BruteForceResult best;
  bool first = true;
  ToyPolicy pol(toy.cells.size(), 0.0);
  enumerate_grid(dims, steps, [&](const std::vector<int>& idx) {
    for (int d = 0; d < dims; ++d) {
      const double v = static_cast<double>(idx[static_cast<std::size_t>(d)]) / steps;
      for (std::size_t cell : owned[static_cast<std::size_t>(d)]) pol[cell] = v;
    }
    const ToyValues vals = toy_conditional_values(toy, pol);
    const double obj = toy_objective(vals, objective);
    bool take = false;
    if (first || obj > best.objective + kTieEps) {
      take = true;
    } else if (objective.kind == ValueObjective::MaxMin && obj > best.objective - kTieEps &&
               vals.v > best.values.v + kTieEps) {
      take = true;  // among max-min ties prefer the larger overall value
    }
    if (take) {
      best.policy = pol;
      best.objective = obj;
      best.values = vals;
      first = false;
    }
  });
  return best;
}

bool check_lemma1(const ToyProblem& toy, double grid_step) {
  toy.validate();
  const int steps = grid_steps(grid_step);
  const int groups = toy.group_count();

  // Per-group optimum: each group's value depends only on its own cells.
  ToyPolicy star(toy.cells.size(), 0.0);
  for (int g = 0; g < groups; ++g) {
    std::vector<std::size_t> mine;
    for (std::size_t i = 0; i < toy.cells.size(); ++i)
      if (toy.cells[i].s == g) mine.push_back(i);
    // V_g is separable across cells; optimize each cell on the grid.
    for (std::size_t cell : mine) {
      double best_v = 0.0, best_pi = 0.0;
      for (int k = 0; k <= steps; ++k) {
        const double pi = static_cast<double>(k) / steps;
        const double payoff = pi * toy.cells[cell].mu1 + (1.0 - pi) * toy.cells[cell].mu0;
        if (k == 0 || payoff > best_v + kTieEps) {
          best_v = payoff;
          best_pi = pi;
        }
      }
      star[cell] = best_pi;
    }
  }

  const ToyValues star_vals = toy_conditional_values(toy, star);
  const BruteForceResult mm =
      brute_force_toy_search(toy, {ValueObjective::MaxMin, 0.0}, grid_step, false);
  const BruteForceResult uf =
      brute_force_toy_search(toy, {ValueObjective::Unrestricted, 0.0}, grid_step, false);
  const double star_min = star_vals.v_by_group.minCoeff();
  return star_min >= mm.objective - 1e-9 && star_vals.v >= uf.objective - 1e-9;
}

std::string to_string(Lemma2Verdict v) {
  switch (v) {
    case Lemma2Verdict::Holds:
      return "holds";
    case Lemma2Verdict::Inapplicable:
      return "inapplicable";
    case Lemma2Verdict::Failed:
      return "failed";
  }
  return "?";
}

Lemma2Verdict check_lemma2(const ToyProblem& toy, double grid_step) {
  toy.validate();
  const int steps = grid_steps(grid_step);
  const std::vector<int> levels = toy.levels();

  double ite_scale = 0.0;
  for (const ToyCell& c : toy.cells) ite_scale += std::abs(c.mu1 - c.mu0);
  const double tol = 2.0 * grid_step * std::max(ite_scale, 1.0);

  const BruteForceResult mm =
      brute_force_toy_search(toy, {ValueObjective::MaxMin, 0.0}, grid_step, true);
  const double mm_gap = mm.values.v_by_group.maxCoeff() - mm.values.v_by_group.minCoeff();

  // Best action-fair envy-free(0) grid policy: smallest attainable gap
  // first, then the largest overall value.
  const int dims = static_cast<int>(levels.size());
  std::vector<std::vector<std::size_t>> owned(levels.size());
  for (std::size_t i = 0; i < toy.cells.size(); ++i) {
    const auto it = std::find(levels.begin(), levels.end(), toy.cells[i].x_level);
    owned[static_cast<std::size_t>(it - levels.begin())].push_back(i);
  }
  double best_gap = 0.0, best_v = 0.0, best_min = 0.0;
  bool first = true;
  ToyPolicy pol(toy.cells.size(), 0.0);
  enumerate_grid(dims, steps, [&](const std::vector<int>& idx) {
    for (int d = 0; d < dims; ++d) {
      const double v = static_cast<double>(idx[static_cast<std::size_t>(d)]) / steps;
      for (std::size_t cell : owned[static_cast<std::size_t>(d)]) pol[cell] = v;
    }
    const ToyValues vals = toy_conditional_values(toy, pol);
    const double gap = vals.v_by_group.maxCoeff() - vals.v_by_group.minCoeff();
    if (first || gap < best_gap - kTieEps ||
        (gap < best_gap + kTieEps && vals.v > best_v + kTieEps)) {
      best_gap = gap;
      best_v = vals.v;
      best_min = vals.v_by_group.minCoeff();
      first = false;
    }
  });

  const bool equalized = mm_gap <= tol;
  const bool coincides = best_min >= mm.objective - tol;
  if (equalized && coincides) return Lemma2Verdict::Holds;

  // Premise proxy: binary S, and the max-min optimum is improvable for the
  // worst group on some positive-probability level.
  if (toy.group_count() != 2) return Lemma2Verdict::Inapplicable;
  Eigen::Index worst;
  mm.values.v_by_group.minCoeff(&worst);
  bool premise = false;
  for (std::size_t d = 0; d < owned.size(); ++d) {
    for (std::size_t cell : owned[d]) {
      const ToyCell& c = toy.cells[cell];
      if (c.s != static_cast<int>(worst) || c.prob <= 0.0) continue;
      const double ite = c.mu1 - c.mu0;
      const double pi = mm.policy[cell];
      if ((ite > 0.0 && pi < 1.0 - 1e-12) || (ite < 0.0 && pi > 1e-12)) premise = true;
    }
  }
  return premise ? Lemma2Verdict::Failed : Lemma2Verdict::Inapplicable;
}

std::pair<Dataset, NuisanceEstimates> materialize_toy(const ToyProblem& toy, int n) {
  toy.validate();
  if (n < static_cast<int>(toy.cells.size()))
    throw ConfigError("need at least one row per toy cell");

  // Largest-remainder apportionment of n rows over the cells.
  std::vector<int> counts(toy.cells.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  int assigned = 0;
  for (std::size_t i = 0; i < toy.cells.size(); ++i) {
    const double exact = n * toy.cells[i].prob;
    counts[i] = static_cast<int>(std::floor(exact));
    rema.push_back({exact - counts[i], i});
    assigned += counts[i];
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int k = 0; k < n - assigned; ++k) ++counts[rema[static_cast<std::size_t>(k)].second];

  Dataset ds;
  ds.group_count = toy.group_count();
  ds.feature_names = {"x_level"};
  ds.x.resize(n, 1);
  ds.s.resize(n);
  ds.a.resize(n);
  ds.y.resize(n);
  NuisanceEstimates nuis;
  nuis.mu0_hat.resize(n);
  nuis.mu1_hat.resize(n);
  nuis.pb_hat = VectorXd::Constant(n, 0.5);
  nuis.source = NuisanceEstimates::Source::Oracle;
  nuis.clip_bound = 0.0;

  int row = 0;
  for (std::size_t i = 0; i < toy.cells.size(); ++i) {
    const ToyCell& c = toy.cells[i];
    for (int k = 0; k < counts[i]; ++k, ++row) {
      const int a = k % 2;
      ds.x(row, 0) = static_cast<double>(c.x_level);
      ds.s(row) = c.s;
      ds.a(row) = a;
      ds.y(row) = a == 1 ? c.mu1 : c.mu0;
      nuis.mu0_hat(row) = c.mu0;
      nuis.mu1_hat(row) = c.mu1;
    }
  }
  ds.validate();
  nuis.validate();
  return {std::move(ds), std::move(nuis)};
}

double action_fairness_gap_sim(const TrainedPolicy& policy, const SimConfig& cfg, int n_mc,
                               std::uint64_t seed, const FeatureStats* stats) {
  if (n_mc <= 0) throw ConfigError("n_mc must be positive");
  (void)cfg;
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> draw_xu(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Eigen::MatrixXd x1(n_mc, 2), x0(n_mc, 2);
  for (int i = 0; i < n_mc; ++i) {
    const double xu = draw_xu(rng);
    x1(i, 0) = xu;
    x1(i, 1) = unit(rng);         // X_s | S=1 ~ U[0,1]
    x0(i, 0) = xu;
    x0(i, 1) = unit(rng) - 1.0;   // X_s | S=0 ~ U[-1,0]
  }
  if (stats) {
    x1 = stats->apply(x1);
    x0 = stats->apply(x0);
  }
  const VectorXd p1 = policy.predict(x1, VectorXi::Constant(n_mc, 1));
  const VectorXd p0 = policy.predict(x0, VectorXi::Constant(n_mc, 0));
  return (p1 - p0).mean();
}

double spearman_rank(const VectorXd& a, const VectorXd& b) {
  const int n = static_cast<int>(a.size());
  if (n < 2 || b.size() != n) throw UsageError("rank correlation needs two aligned vectors, n >= 2");

  auto ranks = [n](const VectorXd& v) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) { return v(i) < v(j); });
    VectorXd r(n);
    int i = 0;
    while (i < n) {
      int j = i;
      while (j + 1 < n && v(order[static_cast<std::size_t>(j + 1)]) == v(order[static_cast<std::size_t>(i)])) ++j;
      const double avg = (i + j) / 2.0 + 1.0;  // average rank, 1-based
      for (int k = i; k <= j; ++k) r(order[static_cast<std::size_t>(k)]) = avg;
      i = j + 1;
    }
    return r;
  };

  const VectorXd ra = ranks(a), rb = ranks(b);
  const VectorXd da = ra.array() - ra.mean();
  const VectorXd db = rb.array() - rb.mean();
  const double va = da.squaredNorm(), vb = db.squaredNorm();
  if (va <= 0.0 || vb <= 0.0)
    throw EstimationError("rank correlation undefined for a constant vector");
  return da.dot(db) / std::sqrt(va * vb);
}

void BoundInputs::validate() const {
  if (n <= 0.0) throw ConfigError("n must be positive");
  if (group_count < 1) throw ConfigError("group count must be >= 1");
  if (nu <= 0.0 || nu > 1.0 / group_count)
    throw ConfigError("nu must be in (0, 1/|S|]");
  if (outcome_bound <= 0.0) throw ConfigError("outcome bound C must be positive");
  if (xi <= 0.0 || xi >= 0.5) throw ConfigError("xi must be in (0, 0.5)");
  if (rademacher < 0.0) throw ConfigError("Rademacher complexity must be nonnegative");
  if (p <= 0.0 || p >= 1.0) throw ConfigError("p must be in (0,1)");
  if (p1 <= 0.0 || p2 <= 0.0 || p1 + p2 >= 1.0) throw ConfigError("p1 + p2 must be in (0,1)");
}

std::string to_string(BoundKind k) {
  switch (k) {
    case BoundKind::Unrestricted:
      return "unrestricted";
    case BoundKind::EnvyFree:
      return "envy_free";
    case BoundKind::MaxMin:
      return "max_min";
  }
  return "?";
}

double k_constant(ScoreMethod method, double xi) {
  if (xi <= 0.0 || xi >= 0.5) throw ConfigError("xi must be in (0, 0.5)");
  switch (method) {
    case ScoreMethod::DM:
      return 1.0;
    case ScoreMethod::IPW:
      return 1.0 / (2.0 * xi);
    case ScoreMethod::DR:
      return (xi + 1.0) / xi;
  }
  throw UsageError("unknown score method");
}

double ell(const BoundInputs& in) {
  return 1.0 - in.nu + std::sqrt(std::log(in.group_count / in.p2) / 2.0);
}

double bound_penalty(const BoundInputs& in, BoundKind kind) {
  in.validate();
  const double c = in.outcome_bound;
  const double k = k_constant(in.method, in.xi);
  const double sqrt_n = std::sqrt(in.n);

  if (kind == BoundKind::Unrestricted)
    return 2.0 * c * k * (in.rademacher + std::sqrt(8.0 * std::log(2.0 / in.p) / in.n));

  const double l = ell(in);
  if (!(l / sqrt_n < in.nu))
    throw BoundInapplicableError("group-conditional bound requires l(n,p2)/sqrt(n) < nu", l, in.nu);
  const double ratio = l / (in.nu - l / sqrt_n);

  if (kind == BoundKind::EnvyFree) {
    return 2.0 * c * k * (2.0 + in.nu) / in.nu *
           (in.rademacher + std::sqrt(8.0 * std::log(4.0 * in.group_count / in.p1) / in.n) +
            2.0 / ((2.0 + in.nu) * sqrt_n) * ratio);
  }
  return 2.0 * c * k / in.nu *
         (in.rademacher + std::sqrt(8.0 * std::log(2.0 * in.group_count / in.p1) / in.n) +
          ratio / sqrt_n);
}

}  // namespace fairpol
