#include "fairpol/policylearn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

namespace fairpol {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

std::string to_string(ValueObjective kind) {
  switch (kind) {
    case ValueObjective::Unrestricted:
      return "unrestricted";
    case ValueObjective::EnvyFree:
      return "envy_free";
    case ValueObjective::MaxMin:
      return "max_min";
  }
  return "?";
}

double envy_free_objective(const ValueReport& report, double lambda) {
  if (report.v_by_group.size() < 1) throw UsageError("objective needs at least one group");
  if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  const double gap = report.v_by_group.maxCoeff() - report.v_by_group.minCoeff();
  return report.v_hat - lambda * gap;
}

double maxmin_objective(const ValueReport& report) {
  if (report.v_by_group.size() < 1) throw UsageError("objective needs at least one group");
  return report.v_by_group.minCoeff();
}

double objective_value(const ValueReport& report, const PolicyObjectiveSpec& spec) {
  switch (spec.kind) {
    case ValueObjective::Unrestricted:
      return report.v_hat;
    case ValueObjective::EnvyFree:
      return envy_free_objective(report, spec.lambda);
    case ValueObjective::MaxMin:
      return maxmin_objective(report);
  }
  throw UsageError("unknown objective");
}

MatrixXd TrainedPolicy::head_inputs(const MatrixXd& x, const VectorXi& s) const {
  if (front_end) {
    if (!feature_cols.empty())
      throw ConfigError("feature_cols cannot be combined with a representation front-end");
    return front_end->forward_eval(x);
  }
  MatrixXd base;
  if (feature_cols.empty()) {
    base = x;
  } else {
    base.resize(x.rows(), static_cast<int>(feature_cols.size()));
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      if (feature_cols[j] < 0 || feature_cols[j] >= x.cols())
        throw ShapeError("feature column index out of range");
      base.col(static_cast<int>(j)) = x.col(feature_cols[j]);
    }
  }
  return use_sensitive ? append_onehot(base, s, group_count) : base;
}

VectorXd TrainedPolicy::predict(const MatrixXd& x, const VectorXi& s) const {
  return head.forward_eval(head_inputs(x, s)).col(0);
}

PolicyScoreCoeffs score_coefficients(ScoreMethod method, const Dataset& ds,
                                     const NuisanceEstimates& nuis) {
  PolicyScoreCoeffs c;
  c.base = score(method, VectorXd::Zero(ds.n()), ds, nuis).values;
  c.slope = score_policy_grad(method, ds, nuis);
  return c;
}

BatchObjective policy_batch_objective(Mlp& head, const MatrixXd& head_in, const VectorXi& s,
                                      int group_count, const PolicyScoreCoeffs& coeffs,
                                      const PolicyObjectiveSpec& objective, Rng& rng) {
  const int m = static_cast<int>(head_in.rows());
  if (m == 0) throw UsageError("objective on an empty batch");
  if (s.size() != m || coeffs.base.size() != m || coeffs.slope.size() != m)
    throw ShapeError("batch rows, groups and score coefficients must align");

  const MatrixXd pi = head.forward(head_in, rng);
  const VectorXd psi = coeffs.base + coeffs.slope.cwiseProduct(pi.col(0));

  VectorXi counts = VectorXi::Zero(group_count);
  VectorXd sums = VectorXd::Zero(group_count);
  for (int i = 0; i < m; ++i) {
    ++counts(s(i));
    sums(s(i)) += psi(i);
  }
  bool missing = false;
  for (int g = 0; g < group_count; ++g)
    if (counts(g) == 0) missing = true;

  // dO/dpsi, assembled per objective over the groups present in the batch.
  VectorXd dpsi;
  double value = 0.0;
  const double mean = psi.mean();
  switch (objective.kind) {
    case ValueObjective::Unrestricted:
      value = mean;
      dpsi = VectorXd::Constant(m, 1.0 / m);
      break;
    case ValueObjective::EnvyFree: {
      dpsi = VectorXd::Constant(m, 1.0 / m);
      value = mean;
      if (objective.lambda > 0.0) {
        int smax = -1, smin = -1;
        for (int g = 0; g < group_count; ++g) {
          if (counts(g) == 0) continue;
          const double vg = sums(g) / counts(g);
          if (smax < 0 || vg > sums(smax) / counts(smax)) smax = g;
          if (smin < 0 || vg < sums(smin) / counts(smin)) smin = g;
        }
        if (smax >= 0 && smax != smin) {
          const double gap = sums(smax) / counts(smax) - sums(smin) / counts(smin);
          value -= objective.lambda * gap;
          for (int i = 0; i < m; ++i) {
            if (s(i) == smax) dpsi(i) -= objective.lambda / counts(smax);
            if (s(i) == smin) dpsi(i) += objective.lambda / counts(smin);
          }
        }
      }
      break;
    }
    case ValueObjective::MaxMin: {
      int smin = -1;
      for (int g = 0; g < group_count; ++g) {
        if (counts(g) == 0) continue;
        if (smin < 0 || sums(g) / counts(g) < sums(smin) / counts(smin)) smin = g;
      }
      value = sums(smin) / counts(smin);
      dpsi = VectorXd::Zero(m);
      for (int i = 0; i < m; ++i)
        if (s(i) == smin) dpsi(i) = 1.0 / counts(smin);
      break;
    }
  }

  const MatrixXd dpi = dpsi.cwiseProduct(coeffs.slope);
  BatchObjective out;
  out.value = value;
  out.head_grads = head.backward(dpi).grads;
  out.missing_group = missing;
  return out;
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

bool groups_covered(const VectorXi& s, int group_count) {
  VectorXi counts = VectorXi::Zero(group_count);
  for (int i = 0; i < s.size(); ++i) ++counts(s(i));
  return counts.minCoeff() > 0;
}

double trace_objective(const TrainedPolicy& policy, const MatrixXd& head_in, const Dataset& ds,
                       const PolicyScoreCoeffs& coeffs, const PolicyObjectiveSpec& spec,
                       bool groups_ok) {
  const VectorXd pi = policy.head.forward_eval(head_in).col(0);
  ScoreVector sv;
  sv.method = policy.method;
  sv.values = coeffs.base + coeffs.slope.cwiseProduct(pi);
  if (spec.kind == ValueObjective::Unrestricted) return empirical_value(sv);
  if (!groups_ok) return std::numeric_limits<double>::quiet_NaN();
  return objective_value(conditional_values(sv, ds.s, ds.group_count), spec);
}

}  // namespace

std::pair<TrainedPolicy, PolicyTrainReport> train_policy(const Dataset& train, const Dataset* val,
                                                         const NuisanceEstimates& nuis_train,
                                                         const NuisanceEstimates* nuis_val,
                                                         const PolicyTrainSpec& spec,
                                                         const PolicyHyper& hyper) {
  if (nuis_train.n() != train.n()) throw ShapeError("train nuisances must align with train data");
  if (val && val->n() > 0 && (!nuis_val || nuis_val->n() != val->n()))
    throw ShapeError("validation nuisances must align with validation data");
  if (spec.objective.kind != ValueObjective::Unrestricted &&
      !groups_covered(train.s, train.group_count))
    throw EstimationError("group-aware objectives need every group in the training set");

  TrainedPolicy policy;
  policy.front_end = spec.front_end;
  policy.use_sensitive = spec.use_sensitive;
  policy.feature_cols = spec.feature_cols;
  policy.objective = spec.objective;
  policy.method = spec.method;
  policy.group_count = train.group_count;

  Rng init_rng = make_rng(derive_seed(hyper.seed, 30));
  Rng train_rng = make_rng(derive_seed(hyper.seed, 31));

  // The front-end is frozen, so its outputs can be assembled once.
  const MatrixXd train_in = policy.head_inputs(train.x, train.s);
  const int in_dim = static_cast<int>(train_in.cols());
  policy.head =
      Mlp(MlpConfig{{in_dim, hyper.hidden, hyper.hidden, 1}, OutputHead::Sigmoid, hyper.dropout},
          init_rng);
  const PolicyScoreCoeffs coeffs = score_coefficients(spec.method, train, nuis_train);

  const bool have_val = val && val->n() > 0;
  MatrixXd val_in;
  PolicyScoreCoeffs val_coeffs;
  bool val_groups_ok = false;
  if (have_val) {
    val_in = policy.head_inputs(val->x, val->s);
    val_coeffs = score_coefficients(spec.method, *val, *nuis_val);
    val_groups_ok = groups_covered(val->s, val->group_count);
  }
  const bool train_groups_ok = groups_covered(train.s, train.group_count);

  AdamState opt(policy.head, AdamConfig{hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay});
  PolicyTrainReport report;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const auto& rows : make_batches(train.n(), hyper.batch, train_rng)) {
      VectorXi sb(static_cast<int>(rows.size()));
      PolicyScoreCoeffs cb;
      cb.base.resize(static_cast<int>(rows.size()));
      cb.slope.resize(static_cast<int>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        sb(static_cast<int>(i)) = train.s(rows[i]);
        cb.base(static_cast<int>(i)) = coeffs.base(rows[i]);
        cb.slope(static_cast<int>(i)) = coeffs.slope(rows[i]);
      }
      BatchObjective batch = policy_batch_objective(policy.head, gather_rows(train_in, rows), sb,
                                                    train.group_count, cb, spec.objective,
                                                    train_rng);
      if (batch.missing_group) ++report.missing_group_batches;
      // Gradient ascent: feed the negated gradient to the minimizer.
      for (auto& g : batch.head_grads) {
        g.w = -g.w;
        g.b = -g.b;
      }
      opt.step(policy.head, batch.head_grads);
    }

    const double train_obj =
        trace_objective(policy, train_in, train, coeffs, spec.objective, train_groups_ok);
    if (!std::isfinite(train_obj) && train_groups_ok)
      throw TrainingError("policy objective became non-finite", epoch);
    report.train_objective.push_back(train_obj);
    report.val_objective.push_back(
        have_val ? trace_objective(policy, val_in, *val, val_coeffs, spec.objective, val_groups_ok)
                 : std::numeric_limits<double>::quiet_NaN());
  }

  if (have_val && val_groups_ok) {
    report.final_validation = evaluate_policy(policy, *val, *nuis_val, spec.method);
  } else {
    report.final_validation = evaluate_policy(policy, train, nuis_train, spec.method);
  }
  return {std::move(policy), std::move(report)};
}

ValueReport evaluate_policy(const TrainedPolicy& policy, const Dataset& ds,
                            const NuisanceEstimates& nuis, ScoreMethod method) {
  const VectorXd pi = policy.predict(ds.x, ds.s);
  return conditional_values(score(method, pi, ds, nuis), ds.s, ds.group_count);
}

std::string TrainedPolicy::to_json() const {
  nlohmann::json j;
  j["head"] = nlohmann::json::parse(head.to_json());
  if (front_end) j["front_end"] = nlohmann::json::parse(front_end->to_json());
  j["use_sensitive"] = use_sensitive;
  j["feature_cols"] = feature_cols;
  j["objective"] = to_string(objective.kind);
  j["lambda"] = objective.lambda;
  j["method"] = fairpol::to_string(method);
  j["group_count"] = group_count;
  return j.dump();
}

TrainedPolicy TrainedPolicy::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainedPolicy p;
  p.head = Mlp::from_json(j.at("head").dump());
  if (j.contains("front_end")) p.front_end = Mlp::from_json(j.at("front_end").dump());
  p.use_sensitive = j.at("use_sensitive").get<bool>();
  p.feature_cols = j.at("feature_cols").get<std::vector<int>>();
  const std::string kind = j.at("objective").get<std::string>();
  p.objective.kind = kind == "unrestricted" ? ValueObjective::Unrestricted
                     : kind == "envy_free"  ? ValueObjective::EnvyFree
                     : kind == "max_min"
                         ? ValueObjective::MaxMin
                         : throw ParseError("unknown objective '" + kind + "'", 0, "objective");
  p.objective.lambda = j.at("lambda").get<double>();
  p.method = score_method_from_string(j.at("method").get<std::string>());
  p.group_count = j.at("group_count").get<int>();
  return p;
}

void write_policy_trace_csv(const PolicyTrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << "epoch,train_objective,val_objective\n";
  char buf[128];
  for (std::size_t e = 0; e < report.train_objective.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e, report.train_objective[e],
                  report.val_objective[e]);
    out << buf;
  }
}

}  // namespace fairpol
