#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fairpol/data.hpp"
#include "fairpol/nn.hpp"

namespace fairpol {

// Step 1 of the pipeline: representation phi of the covariates that stays
// predictive of the outcome while an adversary cannot recover the sensitive
// attribute. phi never sees s; any policy head composed with it is
// structurally blind to the sensitive attribute.
struct FairRepModel {
  Mlp phi;   // x -> R^k, linear output
  Mlp g_y;   // outcome head on phi, linear output
  Mlp g_s;   // sensitive head on phi, softmax over |S|
  double gamma = 0.0;
  int group_count = 2;
};

// Mean squared error of g_y(phi(x)) against y, eval mode.
double outcome_loss(const FairRepModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Mean categorical cross-entropy of g_s(phi(x)) against s, eval mode.
double sensitivity_loss(const FairRepModel& model, const Eigen::MatrixXd& x,
                        const Eigen::VectorXi& s);

// Mean over samples of -(1/|S|) sum_j log g_s(phi(x))_j; minimized at the
// uniform adversary with value ln|S|.
double confusion_loss(const FairRepModel& model, const Eigen::MatrixXd& x);

struct RepHyper {
  int width = 5;  // hidden layer width and representation dimension
  double lr = 1e-3;
  int epochs = 400;
  int batch = 64;
  double dropout = 0.0;
  double weight_decay = 0.0;
  double gamma = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t adversary_seed = 0;  // 0: derive from seed
  // Test hook: called with 'Y', 'P' or 'S' at each parameter update.
  std::function<void(char)> update_observer;
};

struct RepTrainReport {
  std::vector<double> l_y, l_s, l_conf;  // full-train losses per epoch
  double holdout_outcome_mse = std::numeric_limits<double>::quiet_NaN();
  double holdout_adversary_accuracy = std::numeric_limits<double>::quiet_NaN();
};

// Alternating minibatch scheme: theta_Y and theta_Phi gradients from one
// forward at the pre-update parameters, then a fresh forward for theta_S.
// With gamma == 0 the adversarial terms vanish and are skipped, so the phi
// trajectory is bitwise-independent of the adversary. Returns phi frozen.
std::pair<FairRepModel, RepTrainReport> train_fair_representation(const Dataset& train,
                                                                  const Dataset& val,
                                                                  const RepHyper& hyper);

// Freshly-trained softmax classifier predicting s from the given features;
// returns held-out accuracy. Used to probe how much sensitive information a
// representation retains.
double probe_accuracy(const Eigen::MatrixXd& features_train, const Eigen::VectorXi& s_train,
                      const Eigen::MatrixXd& features_test, const Eigen::VectorXi& s_test,
                      int group_count, std::uint64_t seed);

void write_rep_trace_csv(const RepTrainReport& report, const std::string& path);

}  // namespace fairpol
