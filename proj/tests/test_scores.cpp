#include <cmath>

#include "doctest.h"
#include "fairpol/scores.hpp"

using namespace fairpol;
using Eigen::VectorXd;
using Eigen::VectorXi;

namespace {

struct Fixture {
  Dataset ds;
  NuisanceEstimates nuis;
};

Fixture random_fixture(int n, int groups, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Fixture f;
  f.ds.group_count = groups;
  f.ds.x = Eigen::MatrixXd::Zero(n, 1);
  f.ds.s.resize(n);
  f.ds.a.resize(n);
  f.ds.y.resize(n);
  f.nuis.mu0_hat.resize(n);
  f.nuis.mu1_hat.resize(n);
  f.nuis.pb_hat.resize(n);
  f.nuis.clip_bound = 0.05;
  for (int i = 0; i < n; ++i) {
    f.ds.s(i) = i < groups ? i : static_cast<int>(u(rng) * groups) % groups;
    f.ds.a(i) = u(rng) < 0.5 ? 0 : 1;
    f.ds.y(i) = g(rng);
    f.nuis.mu0_hat(i) = g(rng);
    f.nuis.mu1_hat(i) = g(rng);
    f.nuis.pb_hat(i) = 0.05 + 0.9 * u(rng);
  }
  return f;
}

VectorXd random_policy(int n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd pi(n);
  for (int i = 0; i < n; ++i) pi(i) = u(rng);
  return pi;
}

}  // namespace

TEST_SUITE("scores") {

TEST_CASE("direct method at the policy extremes") {
  Fixture f = random_fixture(40, 2, 1);
  const ScoreVector at0 = score(ScoreMethod::DM, VectorXd::Zero(40), f.ds, f.nuis);
  CHECK(at0.values == f.nuis.mu0_hat);
  const ScoreVector at1 = score(ScoreMethod::DM, VectorXd::Ones(40), f.ds, f.nuis);
  CHECK(at1.values == f.nuis.mu1_hat);
}

TEST_CASE("ipw of the behavioral policy returns the outcomes exactly") {
  Fixture f = random_fixture(60, 2, 2);
  const ScoreVector sv = score(ScoreMethod::IPW, f.nuis.pb_hat, f.ds, f.nuis);
  CHECK(sv.values == f.ds.y);
  CHECK(empirical_value(sv) == f.ds.y.mean());
}

TEST_CASE("doubly robust collapses to the direct method when y equals mu_a") {
  Fixture f = random_fixture(50, 2, 3);
  for (int i = 0; i < f.ds.n(); ++i)
    f.ds.y(i) = f.ds.a(i) == 1 ? f.nuis.mu1_hat(i) : f.nuis.mu0_hat(i);
  const VectorXd pi = random_policy(50, 4);
  const ScoreVector dr = score(ScoreMethod::DR, pi, f.ds, f.nuis);
  const ScoreVector dm = score(ScoreMethod::DM, pi, f.ds, f.nuis);
  CHECK(dr.values == dm.values);
}

TEST_CASE("doubly robust of the behavioral policy is the direct method plus the residual") {
  Fixture f = random_fixture(50, 2, 11);
  const ScoreVector dr = score(ScoreMethod::DR, f.nuis.pb_hat, f.ds, f.nuis);
  const ScoreVector dm = score(ScoreMethod::DM, f.nuis.pb_hat, f.ds, f.nuis);
  for (int i = 0; i < f.ds.n(); ++i) {
    const double mu_a = f.ds.a(i) == 1 ? f.nuis.mu1_hat(i) : f.nuis.mu0_hat(i);
    CHECK(dr.values(i) == dm.values(i) + (f.ds.y(i) - mu_a));
  }
}

TEST_CASE("ipw hand evaluation") {
  Fixture f = random_fixture(1, 1, 5);
  f.ds.a(0) = 1;
  f.ds.y(0) = 2.0;
  f.nuis.pb_hat(0) = 0.5;
  VectorXd pi(1);
  pi << 1.0;
  CHECK(score(ScoreMethod::IPW, pi, f.ds, f.nuis).values(0) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("empirical value is the mean of the scores") {
  ScoreVector sv;
  sv.values.resize(3);
  sv.values << 1, 2, 3;
  CHECK(empirical_value(sv) == 2.0);
  sv.values = VectorXd::Constant(7, 0.37);
  CHECK(empirical_value(sv) == doctest::Approx(0.37).epsilon(1e-15));
  sv.values.resize(0);
  CHECK_THROWS_AS(empirical_value(sv), UsageError);
}

TEST_CASE("toy fixture value matches the closed-form overall value") {
  // Under the always-treat-(male,high) policy the per-gender values are
  // V_F = 2 - pi(F,L) - 2 pi(F,H) = 2 and V_M = 1 - pi(M,L) + pi(M,H) = 2,
  // so a score vector carrying the per-gender values at 20/80 weights must
  // average to exactly 0.2*2 + 0.8*2 = 2.
  const int n = 50;
  ScoreVector sv;
  sv.values.resize(n);
  VectorXi s(n);
  for (int i = 0; i < n; ++i) {
    s(i) = i < n / 5 ? 0 : 1;
    sv.values(i) = 2.0;
  }
  CHECK(empirical_value(sv) == 2.0);
  const ValueReport rep = conditional_values(sv, s, 2);
  CHECK(rep.v_by_group(0) == 2.0);
  CHECK(rep.v_by_group(1) == 2.0);
  CHECK(rep.p_by_group(0) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("conditional values by hand") {
  ScoreVector sv;
  sv.values.resize(4);
  sv.values << 1, 1, 3, 3;
  VectorXi s(4);
  s << 0, 0, 1, 1;
  const ValueReport rep = conditional_values(sv, s, 2);
  CHECK(rep.v_by_group(0) == 1.0);
  CHECK(rep.v_by_group(1) == 3.0);
  CHECK(rep.v_hat == 2.0);
  CHECK(rep.p_by_group.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single group degenerates to the overall value") {
  ScoreVector sv;
  sv.values.resize(5);
  sv.values << 1, 2, 3, 4, 10;
  const ValueReport rep = conditional_values(sv, VectorXi::Zero(5), 1);
  CHECK(rep.v_by_group(0) == rep.v_hat);
}

TEST_CASE("empty group raises an estimation error naming the group") {
  ScoreVector sv;
  sv.values = VectorXd::Ones(3);
  VectorXi s(3);
  s << 0, 0, 0;
  try {
    conditional_values(sv, s, 2);
    FAIL("expected EstimationError");
  } catch (const EstimationError& e) {
    CHECK(std::string(e.what()).find("group 1") != std::string::npos);
  }
}

TEST_CASE("decomposition identity holds for all methods on random instances") {
  for (int rep = 0; rep < 100; ++rep) {
    Fixture f = random_fixture(5 + rep % 40, 1 + rep % 4, 100 + rep);
    const VectorXd pi = random_policy(f.ds.n(), 200 + rep);
    for (ScoreMethod m : {ScoreMethod::DM, ScoreMethod::IPW, ScoreMethod::DR}) {
      const ValueReport r = conditional_values(score(m, pi, f.ds, f.nuis), f.ds.s, f.ds.group_count);
      CHECK(std::abs(r.v_hat - r.p_by_group.dot(r.v_by_group)) <= 1e-10);
    }
  }
}

TEST_CASE("direct-method scores are affine in the policy") {
  Fixture f = random_fixture(30, 2, 7);
  const VectorXd p1 = random_policy(30, 8), p2 = random_policy(30, 9);
  const double lam = 0.37;
  const ScoreVector mix = score(ScoreMethod::DM, lam * p1 + (1 - lam) * p2, f.ds, f.nuis);
  const ScoreVector s1 = score(ScoreMethod::DM, p1, f.ds, f.nuis);
  const ScoreVector s2 = score(ScoreMethod::DM, p2, f.ds, f.nuis);
  CHECK((mix.values - (lam * s1.values + (1 - lam) * s2.values)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("score slope matches a direct difference") {
  Fixture f = random_fixture(25, 2, 10);
  for (ScoreMethod m : {ScoreMethod::DM, ScoreMethod::IPW, ScoreMethod::DR}) {
    const VectorXd slope = score_policy_grad(m, f.ds, f.nuis);
    const VectorXd at0 = score(m, VectorXd::Zero(25), f.ds, f.nuis).values;
    const VectorXd at1 = score(m, VectorXd::Ones(25), f.ds, f.nuis).values;
    CHECK((slope - (at1 - at0)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("degenerate propensities are rejected") {
  Fixture f = random_fixture(5, 1, 12);
  f.nuis.pb_hat(3) = 1.0;
  const VectorXd pi = random_policy(5, 13);
  CHECK_THROWS_AS(score(ScoreMethod::IPW, pi, f.ds, f.nuis), NumericError);
  CHECK_THROWS_AS(score(ScoreMethod::DR, pi, f.ds, f.nuis), NumericError);
  CHECK_NOTHROW(score(ScoreMethod::DM, pi, f.ds, f.nuis));
}

TEST_CASE("policy outputs outside [0,1] are rejected") {
  Fixture f = random_fixture(4, 1, 14);
  VectorXd pi = VectorXd::Constant(4, 1.5);
  CHECK_THROWS_AS(score(ScoreMethod::DM, pi, f.ds, f.nuis), UsageError);
}

}  // TEST_SUITE
