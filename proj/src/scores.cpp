#include "fairpol/scores.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace fairpol {

using Eigen::VectorXd;
using Eigen::VectorXi;

std::string to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::DM:
      return "DM";
    case ScoreMethod::IPW:
      return "IPW";
    case ScoreMethod::DR:
      return "DR";
  }
  return "?";
}

ScoreMethod score_method_from_string(const std::string& name) {
  if (name == "DM" || name == "dm") return ScoreMethod::DM;
  if (name == "IPW" || name == "ipw") return ScoreMethod::IPW;
  if (name == "DR" || name == "dr") return ScoreMethod::DR;
  throw ConfigError("unknown score method '" + name + "'");
}

namespace {

void check_alignment(const VectorXd& policy_out, const Dataset& ds, const NuisanceEstimates& nuis) {
  if (policy_out.size() != ds.n() || nuis.n() != ds.n())
    throw ShapeError("policy outputs, dataset and nuisances must align by row");
  for (int i = 0; i < policy_out.size(); ++i)
    if (policy_out(i) < 0.0 || policy_out(i) > 1.0 || !std::isfinite(policy_out(i)))
      throw UsageError("policy output outside [0,1] at row " + std::to_string(i));
}

void check_propensities(const NuisanceEstimates& nuis) {
  for (int i = 0; i < nuis.n(); ++i)
    if (!(nuis.pb_hat(i) > 0.0 && nuis.pb_hat(i) < 1.0))
      throw NumericError("behavioral propensity outside (0,1)", i);
}

}  // namespace

ScoreVector score(ScoreMethod method, const VectorXd& policy_out, const Dataset& ds,
                  const NuisanceEstimates& nuis) {
  check_alignment(policy_out, ds, nuis);
  ScoreVector sv;
  sv.method = method;
  sv.values.resize(ds.n());
  if (method != ScoreMethod::DM) check_propensities(nuis);
  for (int i = 0; i < ds.n(); ++i) {
    const double pi = policy_out(i);
    const double dm = pi * nuis.mu1_hat(i) + (1.0 - pi) * nuis.mu0_hat(i);
    if (method == ScoreMethod::DM) {
      sv.values(i) = dm;
      continue;
    }
    const int a = ds.a(i);
    const double w_num = a == 1 ? pi : 1.0 - pi;
    const double w_den = a == 1 ? nuis.pb_hat(i) : 1.0 - nuis.pb_hat(i);
    const double w = w_num / w_den;
    if (method == ScoreMethod::IPW) {
      sv.values(i) = w * ds.y(i);
    } else {
      const double mu_a = a == 1 ? nuis.mu1_hat(i) : nuis.mu0_hat(i);
      sv.values(i) = dm + w * (ds.y(i) - mu_a);
    }
  }
  return sv;
}

VectorXd score_policy_grad(ScoreMethod method, const Dataset& ds, const NuisanceEstimates& nuis) {
  if (nuis.n() != ds.n()) throw ShapeError("dataset and nuisances must align by row");
  if (method != ScoreMethod::DM) check_propensities(nuis);
  VectorXd g(ds.n());
  for (int i = 0; i < ds.n(); ++i) {
    const double ite = nuis.mu1_hat(i) - nuis.mu0_hat(i);
    if (method == ScoreMethod::DM) {
      g(i) = ite;
      continue;
    }
    const int a = ds.a(i);
    const double sign = a == 1 ? 1.0 : -1.0;
    const double w_den = a == 1 ? nuis.pb_hat(i) : 1.0 - nuis.pb_hat(i);
    if (method == ScoreMethod::IPW) {
      g(i) = sign * ds.y(i) / w_den;
    } else {
      const double mu_a = a == 1 ? nuis.mu1_hat(i) : nuis.mu0_hat(i);
      g(i) = ite + sign * (ds.y(i) - mu_a) / w_den;
    }
  }
  return g;
}

double empirical_value(const ScoreVector& sv) {
  if (sv.n() == 0) throw UsageError("empirical value of an empty score vector");
  return sv.values.mean();
}

ValueReport conditional_values(const ScoreVector& sv, const VectorXi& s, int group_count) {
  if (sv.n() != s.size()) throw ShapeError("scores and group vector must align");
  if (group_count < 1) throw ConfigError("group_count must be >= 1");
  ValueReport rep;
  rep.v_by_group = VectorXd::Zero(group_count);
  rep.p_by_group = VectorXd::Zero(group_count);
  VectorXi counts = VectorXi::Zero(group_count);
  for (int i = 0; i < sv.n(); ++i) {
    const int g = s(i);
    if (g < 0 || g >= group_count) throw ShapeError("group index out of range");
    rep.v_by_group(g) += sv.values(i);
    ++counts(g);
  }
  for (int g = 0; g < group_count; ++g) {
    if (counts(g) == 0) throw EstimationError("group " + std::to_string(g) + " has no samples");
    rep.v_by_group(g) /= counts(g);
    rep.p_by_group(g) = static_cast<double>(counts(g)) / sv.n();
  }
  rep.v_hat = sv.values.mean();
  return rep;
}

void write_scores_csv(const ScoreVector& sv, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << "row,method,score\n";
  char buf[128];
  const std::string m = to_string(sv.method);
  for (int i = 0; i < sv.n(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.17g\n", i, m.c_str(), sv.values(i));
    out << buf;
  }
}

}  // namespace fairpol
