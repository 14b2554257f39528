#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "fairpol/data.hpp"
#include "fairpol/nn.hpp"

namespace fairpol {

// Per-sample plug-in nuisances for the policy scores. clip_bound == 0 marks
// oracle estimates, which need no clipping.
struct NuisanceEstimates {
  enum class Source { Fitted, Oracle };

  Eigen::VectorXd mu0_hat;
  Eigen::VectorXd mu1_hat;
  Eigen::VectorXd pb_hat;  // in (0,1); within [clip_bound, 1-clip_bound] when fitted
  Source source = Source::Fitted;
  double clip_bound = 0.05;

  int n() const { return static_cast<int>(pb_hat.size()); }
  void validate() const;
};

struct NuisanceHyper {
  int hidden = 32;
  double lr = 1e-3;
  int epochs = 200;
  int batch = 64;
  double dropout = 0.0;
  double weight_decay = 0.0;
  double clip = 0.05;  // propensity clip bound xi
  std::uint64_t seed = 0;
};

// Shared-trunk / two-head outcome regression over (x, one-hot(s)). Each
// training sample updates only its own arm's head.
class OutcomeModel {
 public:
  OutcomeModel() = default;
  OutcomeModel(Mlp trunk, Mlp head0, Mlp head1, int group_count);

  // (mu0_hat, mu1_hat) per row, eval mode.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> predict(const Eigen::MatrixXd& x,
                                                      const Eigen::VectorXi& s) const;

  const Mlp& trunk() const { return trunk_; }
  const Mlp& head(int arm) const { return arm == 0 ? head0_ : head1_; }
  int group_count() const { return group_count_; }

 private:
  Mlp trunk_, head0_, head1_;
  int group_count_ = 1;
};

class PropensityModel {
 public:
  PropensityModel() = default;
  PropensityModel(Mlp net, int group_count, double clip);

  // Clipped to [clip, 1-clip], eval mode.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x, const Eigen::VectorXi& s) const;

  const Mlp& net() const { return net_; }
  double clip() const { return clip_; }

 private:
  Mlp net_;
  int group_count_ = 1;
  double clip_ = 0.05;
};

OutcomeModel fit_outcome_model(const Dataset& train, const NuisanceHyper& hyper);
PropensityModel fit_propensity(const Dataset& train, const NuisanceHyper& hyper);

NuisanceEstimates predict_nuisance(const OutcomeModel& outcome, const PropensityModel& propensity,
                                   const Dataset& ds);

// Exact per-sample nuisances from the simulator ground truth.
NuisanceEstimates oracle_nuisance(const Dataset& ds, const SimOracle& oracle);

Eigen::VectorXd clip_propensity(const Eigen::VectorXd& pb, double clip);

// Audit export: row index, mu0_hat, mu1_hat, pb_hat.
void write_nuisance_csv(const NuisanceEstimates& nuis, const std::string& path);

}  // namespace fairpol
