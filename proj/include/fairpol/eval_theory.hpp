#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "fairpol/data.hpp"
#include "fairpol/nuisance.hpp"
#include "fairpol/policylearn.hpp"

namespace fairpol {

struct ToyCell {
  int s;         // sensitive group
  int x_level;   // covariate level
  double prob;   // joint probability of the cell
  double mu1;
  double mu0;
};

// Finite decision problem over (group, covariate level) cells with known
// expected potential outcomes. Conditional values follow the per-level sum
// convention of the closed-form derivations (L_s times the conditional
// mean), so the reference tables evaluate exactly.
struct ToyProblem {
  std::vector<ToyCell> cells;

  void validate() const;
  int group_count() const;
  std::vector<int> levels() const;  // sorted distinct x levels

  static ToyProblem table4();  // loans: action helps only (male, high)
  static ToyProblem table5();  // action helps everyone, males more

  static ToyProblem from_csv(const std::string& path);  // columns s,x,prob,mu1,mu0
  void to_csv(const std::string& path) const;
};

// Policy over cells, aligned with ToyProblem::cells.
using ToyPolicy = std::vector<double>;

struct ToyValues {
  double v = 0.0;
  Eigen::VectorXd v_by_group;
};

ToyValues toy_conditional_values(const ToyProblem& toy, const ToyPolicy& policy);

struct BruteForceResult {
  ToyPolicy policy;
  double objective = 0.0;
  ToyValues values;
};

// Exhaustive search over per-cell policy values {0, step, ..., 1}. With
// af_constrained the policy is forced constant in s at each x level (one
// grid variable per level, reported expanded over cells). Ties take the
// lexicographically smallest vector; max-min ties prefer the larger overall
// value first, so the search lands on the max-min optimum that is also an
// optimal unrestricted policy whenever one exists on the grid.
BruteForceResult brute_force_toy_search(const ToyProblem& toy, const PolicyObjectiveSpec& objective,
                                        double grid_step, bool af_constrained);

// The per-group-optimal policy attains both the max-min and the
// unrestricted optimum over the grid.
bool check_lemma1(const ToyProblem& toy, double grid_step);

enum class Lemma2Verdict { Holds, Inapplicable, Failed };
std::string to_string(Lemma2Verdict v);

// Action-fair max-min optimum equalizes the group values within grid
// tolerance and coincides with the best action-fair envy-free(0) grid
// policy; when the equivalence fails and the lemma's premises do not hold,
// the verdict is Inapplicable rather than Failed.
Lemma2Verdict check_lemma2(const ToyProblem& toy, double grid_step);

// Deterministic materialization of a toy problem as a dataset with exact
// nuisances (cell counts by largest remainder, alternating actions,
// noiseless outcomes, pb = 1/2).
std::pair<Dataset, NuisanceEstimates> materialize_toy(const ToyProblem& toy, int n);

// Monte Carlo estimate of E[pi(X_u, X_{s=1}, 1) - pi(X_u, X_{s=0}, 0)] under
// the simulator's covariate law, sharing X_u across the two groups. stats,
// when given, standardizes the drawn covariates before the policy sees them.
double action_fairness_gap_sim(const TrainedPolicy& policy, const SimConfig& cfg, int n_mc,
                               std::uint64_t seed, const FeatureStats* stats = nullptr);

// Rank correlation with average ranks for ties.
double spearman_rank(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct BoundInputs {
  double n = 0;         // sample size
  double nu = 0;        // group-probability floor
  int group_count = 2;  // |S|
  double outcome_bound = 1.0;  // C
  double xi = 0.05;            // propensity overlap bound
  double rademacher = 0.0;     // R_n(Pi)
  double p = 0.05;             // failure probability, unrestricted bound
  double p1 = 0.05;            // failure probabilities, group bounds
  double p2 = 0.05;
  ScoreMethod method = ScoreMethod::DM;

  void validate() const;
};

enum class BoundKind { Unrestricted, EnvyFree, MaxMin };
std::string to_string(BoundKind k);

// K_DM = 1, K_IPW = 1/(2 xi), K_DR = (xi+1)/xi.
double k_constant(ScoreMethod method, double xi);

// l(n,p2) = 1 - nu + sqrt(log(|S|/p2)/2); the group bounds require
// l(n,p2)/sqrt(n) < nu.
double ell(const BoundInputs& in);

// The full subtracted penalty of the chosen high-probability lower bound.
// Natural logarithms throughout. Throws BoundInapplicableError when the
// ell-precondition fails for the group-conditional bounds.
double bound_penalty(const BoundInputs& in, BoundKind kind);

}  // namespace fairpol
