#pragma once

#include <Eigen/Dense>
#include <string>

#include "fairpol/data.hpp"
#include "fairpol/nuisance.hpp"

namespace fairpol {

enum class ScoreMethod { DM, IPW, DR };

std::string to_string(ScoreMethod m);
ScoreMethod score_method_from_string(const std::string& name);

struct ScoreVector {
  ScoreMethod method = ScoreMethod::DM;
  Eigen::VectorXd values;
  int n() const { return static_cast<int>(values.size()); }
};

// Per-sample policy scores. DM: pi*mu1 + (1-pi)*mu0. IPW: observed-action
// weight times y. DR: DM plus the weighted outcome residual.
ScoreVector score(ScoreMethod method, const Eigen::VectorXd& policy_out, const Dataset& ds,
                  const NuisanceEstimates& nuis);

// d psi_i / d pi_i. All three scores are affine in pi, so the coefficient
// does not depend on the policy; nuisances stay frozen.
Eigen::VectorXd score_policy_grad(ScoreMethod method, const Dataset& ds,
                                  const NuisanceEstimates& nuis);

double empirical_value(const ScoreVector& sv);

struct ValueReport {
  double v_hat = 0.0;
  Eigen::VectorXd v_by_group;  // group means of the scores
  Eigen::VectorXd p_by_group;  // empirical group shares, sums to 1
};

// Group-reweighted estimator: V_s = group mean of scores, p = group share.
// Every group must have at least one sample.
ValueReport conditional_values(const ScoreVector& sv, const Eigen::VectorXi& s, int group_count);

// Audit export: row index, method, score.
void write_scores_csv(const ScoreVector& sv, const std::string& path);

}  // namespace fairpol
