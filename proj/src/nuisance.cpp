#include "fairpol/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fairpol {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

void NuisanceEstimates::validate() const {
  if (mu0_hat.size() != n() || mu1_hat.size() != n())
    throw ShapeError("nuisance vectors have unequal lengths");
  if (clip_bound < 0.0 || clip_bound >= 0.5) throw ConfigError("clip bound must be in [0, 0.5)");
  const double lo = clip_bound > 0.0 ? clip_bound : 0.0;
  for (int i = 0; i < n(); ++i) {
    if (!std::isfinite(mu0_hat(i)) || !std::isfinite(mu1_hat(i)) || !std::isfinite(pb_hat(i)))
      throw NumericError("non-finite nuisance estimate", i);
    if (pb_hat(i) <= lo - 1e-15 || pb_hat(i) >= 1.0 - lo + 1e-15)
      throw NumericError("propensity outside its admissible range", i);
    if (pb_hat(i) <= 0.0 || pb_hat(i) >= 1.0)
      throw NumericError("propensity outside (0,1)", i);
  }
}

VectorXd clip_propensity(const VectorXd& pb, double clip) {
  if (clip <= 0.0 || clip >= 0.5) throw ConfigError("clip bound must be in (0, 0.5)");
  return pb.cwiseMax(clip).cwiseMin(1.0 - clip);
}

OutcomeModel::OutcomeModel(Mlp trunk, Mlp head0, Mlp head1, int group_count)
    : trunk_(std::move(trunk)),
      head0_(std::move(head0)),
      head1_(std::move(head1)),
      group_count_(group_count) {
  if (trunk_.output_dim() != head0_.input_dim() || trunk_.output_dim() != head1_.input_dim())
    throw ShapeError("trunk output does not match head inputs");
}

std::pair<VectorXd, VectorXd> OutcomeModel::predict(const MatrixXd& x, const VectorXi& s) const {
  const MatrixXd features = trunk_.forward_eval(append_onehot(x, s, group_count_));
  return {head0_.forward_eval(features).col(0), head1_.forward_eval(features).col(0)};
}

PropensityModel::PropensityModel(Mlp net, int group_count, double clip)
    : net_(std::move(net)), group_count_(group_count), clip_(clip) {}

VectorXd PropensityModel::predict(const MatrixXd& x, const VectorXi& s) const {
  return clip_propensity(net_.forward_eval(append_onehot(x, s, group_count_)).col(0), clip_);
}

namespace {

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

OutcomeModel fit_outcome_model(const Dataset& train, const NuisanceHyper& hyper) {
  const int n1 = train.a.sum();
  if (n1 == 0 || n1 == train.n())
    throw EstimationError("outcome model needs samples in both action arms");

  Rng init_rng = make_rng(derive_seed(hyper.seed, 0));
  Rng train_rng = make_rng(derive_seed(hyper.seed, 1));
  const int in = train.p() + train.group_count;
  const int h = hyper.hidden;
  Mlp trunk(MlpConfig{{in, h, h}, OutputHead::Linear, hyper.dropout}, init_rng);
  Mlp head0(MlpConfig{{h, h, 1}, OutputHead::Linear, hyper.dropout}, init_rng);
  Mlp head1(MlpConfig{{h, h, 1}, OutputHead::Linear, hyper.dropout}, init_rng);
  AdamConfig opt{hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay};
  AdamState opt_trunk(trunk, opt), opt_h0(head0, opt), opt_h1(head1, opt);

  const MatrixXd inputs = append_onehot(train.x, train.s, train.group_count);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const auto& rows : make_batches(train.n(), hyper.batch, train_rng)) {
      const int m = static_cast<int>(rows.size());
      const MatrixXd feats = trunk.forward(gather_rows(inputs, rows), train_rng);
      MatrixXd dfeats = MatrixXd::Zero(m, feats.cols());
      for (int arm = 0; arm < 2; ++arm) {
        std::vector<int> local;
        for (int i = 0; i < m; ++i)
          if (train.a(rows[static_cast<std::size_t>(i)]) == arm) local.push_back(i);
        if (local.empty()) continue;
        Mlp& head = arm == 0 ? head0 : head1;
        const MatrixXd pred = head.forward(gather_rows(feats, local), train_rng);
        MatrixXd dpred(static_cast<int>(local.size()), 1);
        for (std::size_t i = 0; i < local.size(); ++i)
          dpred(static_cast<int>(i), 0) =
              2.0 * (pred(static_cast<int>(i), 0) - train.y(rows[static_cast<std::size_t>(local[i])])) / m;
        BackwardResult back = head.backward(dpred);
        (arm == 0 ? opt_h0 : opt_h1).step(head, back.grads);
        for (std::size_t i = 0; i < local.size(); ++i)
          dfeats.row(local[i]) = back.input_grad.row(static_cast<int>(i));
      }
      BackwardResult back = trunk.backward(dfeats);
      opt_trunk.step(trunk, back.grads);
    }
  }
  return OutcomeModel(std::move(trunk), std::move(head0), std::move(head1), train.group_count);
}

PropensityModel fit_propensity(const Dataset& train, const NuisanceHyper& hyper) {
  const int n1 = train.a.sum();
  if (n1 == 0 || n1 == train.n())
    throw EstimationError("propensity model needs samples in both action arms");

  Rng init_rng = make_rng(derive_seed(hyper.seed, 2));
  Rng train_rng = make_rng(derive_seed(hyper.seed, 3));
  const int in = train.p() + train.group_count;
  const int h = hyper.hidden;
  Mlp net(MlpConfig{{in, h, h, 1}, OutputHead::Sigmoid, hyper.dropout}, init_rng);
  AdamState opt(net, AdamConfig{hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay});

  const MatrixXd inputs = append_onehot(train.x, train.s, train.group_count);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const auto& rows : make_batches(train.n(), hyper.batch, train_rng)) {
      const int m = static_cast<int>(rows.size());
      const MatrixXd p = net.forward(gather_rows(inputs, rows), train_rng);
      // binary cross-entropy; dL/dp = (p - a) / (p(1-p) m)
      MatrixXd dp(m, 1);
      for (int i = 0; i < m; ++i) {
        const double pi = p(i, 0);
        const double ai = static_cast<double>(train.a(rows[static_cast<std::size_t>(i)]));
        dp(i, 0) = (pi - ai) / (pi * (1.0 - pi) * m);
      }
      opt.step(net, net.backward(dp).grads);
    }
  }
  return PropensityModel(std::move(net), train.group_count, hyper.clip);
}

NuisanceEstimates predict_nuisance(const OutcomeModel& outcome, const PropensityModel& propensity,
                                   const Dataset& ds) {
  NuisanceEstimates out;
  auto [mu0, mu1] = outcome.predict(ds.x, ds.s);
  out.mu0_hat = std::move(mu0);
  out.mu1_hat = std::move(mu1);
  out.pb_hat = propensity.predict(ds.x, ds.s);
  out.source = NuisanceEstimates::Source::Fitted;
  out.clip_bound = propensity.clip();
  out.validate();
  return out;
}

NuisanceEstimates oracle_nuisance(const Dataset& ds, const SimOracle& oracle) {
  if (ds.p() != 2) throw ShapeError("oracle nuisances need the simulator's (x_u, x_s) layout");
  NuisanceEstimates out;
  out.mu0_hat.resize(ds.n());
  out.mu1_hat.resize(ds.n());
  out.pb_hat.resize(ds.n());
  for (int i = 0; i < ds.n(); ++i) {
    out.mu0_hat(i) = oracle.mu0(ds.x(i, 0), ds.x(i, 1), ds.s(i));
    out.mu1_hat(i) = oracle.mu1(ds.x(i, 0), ds.x(i, 1), ds.s(i));
    out.pb_hat(i) = oracle.propensity(ds.x(i, 0), ds.x(i, 1), ds.s(i));
  }
  out.source = NuisanceEstimates::Source::Oracle;
  out.clip_bound = 0.0;
  out.validate();
  return out;
}

void write_nuisance_csv(const NuisanceEstimates& nuis, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << "row,mu0_hat,mu1_hat,pb_hat\n";
  char buf[200];
  for (int i = 0; i < nuis.n(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", i, nuis.mu0_hat(i), nuis.mu1_hat(i),
                  nuis.pb_hat(i));
    out << buf;
  }
}

}  // namespace fairpol
