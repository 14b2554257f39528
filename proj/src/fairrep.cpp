#include "fairpol/fairrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fairpol {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

namespace {

inline double floored_log(double p) { return std::log(std::max(p, kProbEps)); }

double mse_from(const MatrixXd& pred, const VectorXd& y) {
  return (pred.col(0) - y).squaredNorm() / y.size();
}

double ce_from(const MatrixXd& probs, const VectorXi& s) {
  double loss = 0.0;
  for (int i = 0; i < s.size(); ++i) loss -= floored_log(probs(i, s(i)));
  return loss / s.size();
}

double conf_from(const MatrixXd& probs) {
  const double k = static_cast<double>(probs.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < probs.cols(); ++j) loss -= floored_log(probs(i, j)) / k;
  return loss / probs.rows();
}

std::vector<std::vector<int>> make_batches(int n, int batch, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n; start += batch) {
    const int end = std::min(n, start + batch);
    out.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return out;
}

MatrixXd gather_rows(const MatrixXd& m, const std::vector<int>& rows) {
  MatrixXd out(static_cast<int>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<int>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

double outcome_loss(const FairRepModel& model, const MatrixXd& x, const VectorXd& y) {
  if (x.rows() == 0) throw UsageError("outcome loss on an empty batch");
  return mse_from(model.g_y.forward_eval(model.phi.forward_eval(x)), y);
}

double sensitivity_loss(const FairRepModel& model, const MatrixXd& x, const VectorXi& s) {
  if (x.rows() == 0) throw UsageError("sensitivity loss on an empty batch");
  return ce_from(model.g_s.forward_eval(model.phi.forward_eval(x)), s);
}

double confusion_loss(const FairRepModel& model, const MatrixXd& x) {
  if (x.rows() == 0) throw UsageError("confusion loss on an empty batch");
  return conf_from(model.g_s.forward_eval(model.phi.forward_eval(x)));
}

std::pair<FairRepModel, RepTrainReport> train_fair_representation(const Dataset& train,
                                                                  const Dataset& val,
                                                                  const RepHyper& hyper) {
  if (hyper.gamma < 0.0) throw ConfigError("gamma must be nonnegative");
  if (hyper.gamma > 0.0 && train.group_count < 2)
    throw ConfigError("adversarial training needs at least two sensitive groups");

  const int p = train.p();
  const int h = hyper.width;
  Rng phi_init = make_rng(derive_seed(hyper.seed, 10));
  Rng y_init = make_rng(derive_seed(hyper.seed, 11));
  Rng s_init = make_rng(hyper.adversary_seed != 0 ? hyper.adversary_seed
                                                  : derive_seed(hyper.seed, 12));
  Rng shuffle_rng = make_rng(derive_seed(hyper.seed, 13));
  Rng main_rng = make_rng(derive_seed(hyper.seed, 14));   // dropout of phi/g_y passes
  Rng adv_rng = make_rng(derive_seed(hyper.seed, 15));    // dropout of the adversary pass

  FairRepModel model;
  model.gamma = hyper.gamma;
  model.group_count = train.group_count;
  model.phi = Mlp(MlpConfig{{p, h, h, h}, OutputHead::Linear, hyper.dropout}, phi_init);
  model.g_y = Mlp(MlpConfig{{h, h, h, 1}, OutputHead::Linear, hyper.dropout}, y_init);
  model.g_s =
      Mlp(MlpConfig{{h, h, h, train.group_count}, OutputHead::Softmax, hyper.dropout}, s_init);

  AdamConfig opt{hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay};
  AdamState opt_phi(model.phi, opt), opt_y(model.g_y, opt), opt_s(model.g_s, opt);

  RepTrainReport report;
  const double k = static_cast<double>(train.group_count);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const auto& rows : make_batches(train.n(), hyper.batch, shuffle_rng)) {
      const int m = static_cast<int>(rows.size());
      const MatrixXd xb = gather_rows(train.x, rows);

      // theta_Y and theta_Phi gradients at the pre-update parameters.
      const MatrixXd rep = model.phi.forward(xb, main_rng);
      const MatrixXd pred = model.g_y.forward(rep, main_rng);
      MatrixXd dpred(m, 1);
      for (int i = 0; i < m; ++i)
        dpred(i, 0) = 2.0 * (pred(i, 0) - train.y(rows[static_cast<std::size_t>(i)])) / m;
      BackwardResult back_y = model.g_y.backward(dpred);
      MatrixXd drep = back_y.input_grad;
      if (hyper.gamma > 0.0) {
        const MatrixXd probs = model.g_s.forward(rep, adv_rng);
        MatrixXd dprobs(m, train.group_count);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < train.group_count; ++j)
            dprobs(i, j) = -1.0 / (k * std::max(probs(i, j), kProbEps) * m);
        drep += hyper.gamma * model.g_s.backward(dprobs).input_grad;
      }
      BackwardResult back_phi = model.phi.backward(drep);
      opt_y.step(model.g_y, back_y.grads);
      if (hyper.update_observer) hyper.update_observer('Y');
      opt_phi.step(model.phi, back_phi.grads);
      if (hyper.update_observer) hyper.update_observer('P');

      // Fresh forward with the updated phi, then the adversary step.
      if (hyper.gamma > 0.0) {
        const MatrixXd rep2 = model.phi.forward(xb, adv_rng);
        const MatrixXd probs = model.g_s.forward(rep2, adv_rng);
        MatrixXd dprobs = MatrixXd::Zero(m, train.group_count);
        for (int i = 0; i < m; ++i) {
          const int si = train.s(rows[static_cast<std::size_t>(i)]);
          dprobs(i, si) = -hyper.gamma / (std::max(probs(i, si), kProbEps) * m);
        }
        opt_s.step(model.g_s, model.g_s.backward(dprobs).grads);
        if (hyper.update_observer) hyper.update_observer('S');
      }
    }

    const double ly = outcome_loss(model, train.x, train.y);
    report.l_y.push_back(ly);
    report.l_s.push_back(sensitivity_loss(model, train.x, train.s));
    report.l_conf.push_back(confusion_loss(model, train.x));
    if (!std::isfinite(ly) || !std::isfinite(report.l_s.back()))
      throw TrainingError("representation training diverged", epoch);
  }

  if (val.n() > 0) {
    report.holdout_outcome_mse = outcome_loss(model, val.x, val.y);
    const MatrixXd probs = model.g_s.forward_eval(model.phi.forward_eval(val.x));
    int correct = 0;
    for (int i = 0; i < val.n(); ++i) {
      Eigen::Index arg;
      probs.row(i).maxCoeff(&arg);
      if (static_cast<int>(arg) == val.s(i)) ++correct;
    }
    report.holdout_adversary_accuracy = static_cast<double>(correct) / val.n();
  }
  return {std::move(model), std::move(report)};
}

double probe_accuracy(const MatrixXd& features_train, const VectorXi& s_train,
                      const MatrixXd& features_test, const VectorXi& s_test, int group_count,
                      std::uint64_t seed) {
  if (features_train.rows() != s_train.size() || features_test.rows() != s_test.size())
    throw ShapeError("probe features and labels must align");
  Rng init = make_rng(derive_seed(seed, 20));
  Rng train_rng = make_rng(derive_seed(seed, 21));
  const int p = static_cast<int>(features_train.cols());
  Mlp probe(MlpConfig{{p, 16, 16, group_count}, OutputHead::Softmax, 0.0}, init);
  AdamState opt(probe, AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
  const int n = static_cast<int>(features_train.rows());
  for (int epoch = 0; epoch < 120; ++epoch) {
    for (const auto& rows : make_batches(n, 128, train_rng)) {
      const int m = static_cast<int>(rows.size());
      const MatrixXd probs = probe.forward(gather_rows(features_train, rows), train_rng);
      MatrixXd dprobs = MatrixXd::Zero(m, group_count);
      for (int i = 0; i < m; ++i) {
        const int si = s_train(rows[static_cast<std::size_t>(i)]);
        dprobs(i, si) = -1.0 / (std::max(probs(i, si), kProbEps) * m);
      }
      opt.step(probe, probe.backward(dprobs).grads);
    }
  }
  const MatrixXd probs = probe.forward_eval(features_test);
  int correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg;
    probs.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == s_test(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

void write_rep_trace_csv(const RepTrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << "epoch,l_y,l_s,l_conf\n";
  char buf[160];
  for (std::size_t e = 0; e < report.l_y.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e, report.l_y[e], report.l_s[e],
                  report.l_conf[e]);
    out << buf;
  }
}

}  // namespace fairpol
