#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairpol/data.hpp"
#include "fairpol/nn.hpp"
#include "fairpol/scores.hpp"

namespace fairpol {

enum class ValueObjective { Unrestricted, EnvyFree, MaxMin };

struct PolicyObjectiveSpec {
  ValueObjective kind = ValueObjective::Unrestricted;
  double lambda = 0.0;  // envy-free weight
};

std::string to_string(ValueObjective kind);

// V_hat - lambda * max_{s,s'} |V_s - V_s'|.
double envy_free_objective(const ValueReport& report, double lambda);

// min_s V_s.
double maxmin_objective(const ValueReport& report);

double objective_value(const ValueReport& report, const PolicyObjectiveSpec& spec);

// Stochastic policy: optional frozen representation front-end composed with
// a sigmoid head. With a front-end the policy is structurally blind to s;
// in raw mode the head sees (x restricted to feature_cols, one-hot(s)).
struct TrainedPolicy {
  std::optional<Mlp> front_end;
  bool use_sensitive = true;
  std::vector<int> feature_cols;  // empty: all covariates (raw mode only)
  Mlp head;                       // sigmoid output
  PolicyObjectiveSpec objective;
  ScoreMethod method = ScoreMethod::DM;
  int group_count = 2;

  Eigen::MatrixXd head_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXi& s) const;
  // Probability of action 1 per row, in (0,1); eval mode.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x, const Eigen::VectorXi& s) const;

  std::string to_json() const;
  static TrainedPolicy from_json(const std::string& text);
};

struct PolicyHyper {
  int hidden = 10;
  double lr = 5e-4;
  int epochs = 400;
  int batch = 64;
  double dropout = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct PolicyTrainSpec {
  std::optional<Mlp> front_end;
  bool use_sensitive = true;
  std::vector<int> feature_cols;
  PolicyObjectiveSpec objective;
  ScoreMethod method = ScoreMethod::DM;
};

struct PolicyTrainReport {
  std::vector<double> train_objective;
  std::vector<double> val_objective;  // NaN entries when no/unusable validation set
  ValueReport final_validation;       // on val when available, else train
  int missing_group_batches = 0;
};

// The scores are affine in the policy output: psi = base + slope * pi.
struct PolicyScoreCoeffs {
  Eigen::VectorXd base;
  Eigen::VectorXd slope;
};

PolicyScoreCoeffs score_coefficients(ScoreMethod method, const Dataset& ds,
                                     const NuisanceEstimates& nuis);

struct BatchObjective {
  double value = 0.0;
  ParamGrads head_grads;
  bool missing_group = false;
};

// Objective and its gradient w.r.t. the head parameters on one batch
// (train-mode forward). Group statistics use the batch's own group shares;
// max/min subgradients follow the batch argmax/argmin with ties broken
// toward the smallest group index; a group absent from the batch simply
// contributes no term. Exposed for the gradient test suite.
BatchObjective policy_batch_objective(Mlp& head, const Eigen::MatrixXd& head_in,
                                      const Eigen::VectorXi& s, int group_count,
                                      const PolicyScoreCoeffs& coeffs,
                                      const PolicyObjectiveSpec& objective, Rng& rng);

// Subgradient ascent on the chosen empirical objective over minibatch score
// vectors; the front-end stays frozen. val may be null.
std::pair<TrainedPolicy, PolicyTrainReport> train_policy(const Dataset& train, const Dataset* val,
                                                         const NuisanceEstimates& nuis_train,
                                                         const NuisanceEstimates* nuis_val,
                                                         const PolicyTrainSpec& spec,
                                                         const PolicyHyper& hyper);

ValueReport evaluate_policy(const TrainedPolicy& policy, const Dataset& ds,
                            const NuisanceEstimates& nuis, ScoreMethod method);

void write_policy_trace_csv(const PolicyTrainReport& report, const std::string& path);

}  // namespace fairpol
