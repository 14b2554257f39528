#include <cmath>

#include "doctest.h"
#include "fairpol/nn.hpp"
#include "grad_check.hpp"

using namespace fairpol;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Mlp make_net(const std::vector<int>& sizes, OutputHead head, double dropout, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return Mlp(MlpConfig{sizes, head, dropout}, rng);
}

void zero_params(Mlp& net) {
  for (std::ptrdiff_t i = 0; i < net.parameter_count(); ++i) net.set_param(i, 0.0);
}

MatrixXd random_input(int n, int p, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = dist(rng);
  return x;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("elu evaluates and is smooth at zero") {
  CHECK(elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
  CHECK(elu(2.5) == 2.5);
  const double h = 1e-7;
  const double right = (elu(h) - elu(0.0)) / h;
  const double left = (elu(0.0) - elu(-h)) / h;
  CHECK(std::abs(right - left) < 1e-6);
  CHECK(elu_grad(0.0) == 1.0);
}

TEST_CASE("all-zero parameters map any input to zero") {
  Mlp net = make_net({3, 4, 2}, OutputHead::Linear, 0.0, 1);
  zero_params(net);
  const MatrixXd out = net.forward_eval(random_input(5, 3, 2));
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identity layer passes the input through") {
  Mlp net = make_net({3, 3}, OutputHead::Linear, 0.0, 1);
  net.layers()[0].w = MatrixXd::Identity(3, 3);
  net.layers()[0].b.setZero();
  const MatrixXd x = random_input(4, 3, 3);
  CHECK((net.forward_eval(x) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("eval-mode forward is deterministic bitwise") {
  Mlp net = make_net({4, 8, 3}, OutputHead::Sigmoid, 0.4, 7);
  const MatrixXd x = random_input(6, 4, 8);
  const MatrixXd a = net.forward_eval(x);
  const MatrixXd b = net.forward_eval(x);
  CHECK(a == b);
}

TEST_CASE("softmax head outputs probability vectors") {
  Mlp net = make_net({5, 6, 4}, OutputHead::Softmax, 0.0, 9);
  const MatrixXd p = net.forward_eval(random_input(50, 5, 10) * 10.0);
  for (int i = 0; i < p.rows(); ++i) {
    CHECK(p.row(i).minCoeff() >= 0.0);
    CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-9);
  }
}

TEST_CASE("sigmoid head stays strictly inside (0,1)") {
  Mlp net = make_net({1, 1}, OutputHead::Sigmoid, 0.0, 1);
  net.layers()[0].w(0, 0) = 1.0;
  net.layers()[0].b(0) = 0.0;
  MatrixXd x(2, 1);
  x << 1e4, -1e4;
  const MatrixXd p = net.forward_eval(x);
  CHECK(p(0, 0) < 1.0);
  CHECK(p(0, 0) > 0.0);
  CHECK(p(1, 0) > 0.0);
  CHECK(p(1, 0) < 1.0);
}

TEST_CASE("backward needs a cached forward") {
  Mlp net = make_net({2, 2}, OutputHead::Linear, 0.0, 1);
  CHECK_THROWS_AS(net.backward(MatrixXd::Zero(1, 2)), UsageError);
}

TEST_CASE("dimension mismatch raises a shape error") {
  Mlp net = make_net({3, 2}, OutputHead::Linear, 0.0, 1);
  CHECK_THROWS_AS(net.forward_eval(random_input(2, 4, 1)), ShapeError);
}

TEST_CASE("single linear neuron reproduces the hand gradient") {
  // loss (w*x - y)^2 with w=1, x=2, y=0 -> dloss/dw = 2x(wx-y) = 8
  Mlp net = make_net({1, 1}, OutputHead::Linear, 0.0, 1);
  net.layers()[0].w(0, 0) = 1.0;
  net.layers()[0].b(0) = 0.0;
  Rng rng = make_rng(0);
  MatrixXd x(1, 1);
  x << 2.0;
  const MatrixXd out = net.forward(x, rng);
  MatrixXd dloss(1, 1);
  dloss << 2.0 * (out(0, 0) - 0.0);
  const BackwardResult back = net.backward(dloss);
  CHECK(back.grads[0].w(0, 0) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(back.grads[0].b(0) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("gradient vanishes at a quadratic minimum") {
  Mlp net = make_net({2, 1}, OutputHead::Linear, 0.0, 4);
  Rng rng = make_rng(0);
  const MatrixXd x = random_input(3, 2, 5);
  const MatrixXd target = net.forward_eval(x);
  const MatrixXd out = net.forward(x, rng);
  const BackwardResult back = net.backward(2.0 * (out - target) / out.rows());
  CHECK(back.grads[0].w.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(back.grads[0].b.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("analytic gradients match finite differences for every head") {
  Rng data_rng = make_rng(42);
  const int n = 7;

  SUBCASE("linear head, squared error") {
    Mlp net = make_net({4, 6, 5, 2}, OutputHead::Linear, 0.0, 11);
    const MatrixXd x = random_input(n, 4, 12);
    const MatrixXd y = random_input(n, 2, 13);
    auto loss = [&] { return (net.forward_eval(x) - y).squaredNorm() / n; };
    Rng rng = make_rng(0);
    const MatrixXd out = net.forward(x, rng);
    const BackwardResult back = net.backward(2.0 * (out - y) / n);
    CHECK(testutil::max_grad_error({&net}, loss, {back.grads}) <= 1.0);
  }

  SUBCASE("sigmoid head, binary cross-entropy") {
    Mlp net = make_net({3, 5, 1}, OutputHead::Sigmoid, 0.0, 21);
    const MatrixXd x = random_input(n, 3, 22);
    VectorXd a(n);
    for (int i = 0; i < n; ++i) a(i) = (i % 2 == 0) ? 1.0 : 0.0;
    auto bce = [&] {
      const MatrixXd p = net.forward_eval(x);
      double loss = 0.0;
      for (int i = 0; i < n; ++i)
        loss -= a(i) * std::log(p(i, 0)) + (1.0 - a(i)) * std::log(1.0 - p(i, 0));
      return loss / n;
    };
    Rng rng = make_rng(0);
    const MatrixXd p = net.forward(x, rng);
    MatrixXd dp(n, 1);
    for (int i = 0; i < n; ++i) dp(i, 0) = (p(i, 0) - a(i)) / (p(i, 0) * (1.0 - p(i, 0)) * n);
    const BackwardResult back = net.backward(dp);
    CHECK(testutil::max_grad_error({&net}, bce, {back.grads}) <= 1.0);
  }

  SUBCASE("softmax head, cross-entropy") {
    const int k = 3;
    Mlp net = make_net({4, 6, k}, OutputHead::Softmax, 0.0, 31);
    const MatrixXd x = random_input(n, 4, 32);
    std::vector<int> labels(n);
    std::uniform_int_distribution<int> pick(0, k - 1);
    for (int i = 0; i < n; ++i) labels[i] = pick(data_rng);
    auto ce = [&] {
      const MatrixXd p = net.forward_eval(x);
      double loss = 0.0;
      for (int i = 0; i < n; ++i) loss -= std::log(p(i, labels[static_cast<std::size_t>(i)]));
      return loss / n;
    };
    Rng rng = make_rng(0);
    const MatrixXd p = net.forward(x, rng);
    MatrixXd dp = MatrixXd::Zero(n, k);
    for (int i = 0; i < n; ++i)
      dp(i, labels[static_cast<std::size_t>(i)]) = -1.0 / (p(i, labels[static_cast<std::size_t>(i)]) * n);
    const BackwardResult back = net.backward(dp);
    CHECK(testutil::max_grad_error({&net}, ce, {back.grads}) <= 1.0);
  }
}

TEST_CASE("backward reuses the dropout mask of the forward pass") {
  Mlp net = make_net({3, 16, 1}, OutputHead::Linear, 0.5, 51);
  const MatrixXd x = random_input(5, 3, 52);
  const std::uint64_t mask_seed = 99;
  auto loss = [&] {
    Rng rng = make_rng(mask_seed);
    Mlp copy = net;
    return copy.forward(x, rng).squaredNorm() / x.rows();
  };
  Rng rng = make_rng(mask_seed);
  const MatrixXd out = net.forward(x, rng);
  const BackwardResult back = net.backward(2.0 * out / x.rows());
  CHECK(testutil::max_grad_error({&net}, loss, {back.grads}) <= 1.0);
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  Mlp net = make_net({2, 3, 1}, OutputHead::Linear, 0.0, 61);
  const Mlp before = net;
  AdamState opt(net, {});
  opt.step(net, net.zero_grads());
  for (std::ptrdiff_t i = 0; i < net.parameter_count(); ++i)
    CHECK(net.get_param(i) == before.get_param(i));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam first step matches the bias-corrected hand value") {
  // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
  Mlp net = make_net({1, 1}, OutputHead::Linear, 0.0, 62);
  net.layers()[0].w(0, 0) = 1.0;
  AdamState opt(net, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  ParamGrads grads = net.zero_grads();
  grads[0].w(0, 0) = 3.0;
  opt.step(net, grads);
  CHECK(net.layers()[0].w(0, 0) == doctest::Approx(1.0 - 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("two identical-gradient steps move farther than one") {
  Mlp one = make_net({1, 1}, OutputHead::Linear, 0.0, 63);
  Mlp two = one;
  AdamState opt1(one, {}), opt2(two, {});
  ParamGrads grads = one.zero_grads();
  grads[0].w(0, 0) = 2.0;
  const double start = one.layers()[0].w(0, 0);
  opt1.step(one, grads);
  opt2.step(two, grads);
  opt2.step(two, grads);
  CHECK(std::abs(two.layers()[0].w(0, 0) - start) > std::abs(one.layers()[0].w(0, 0) - start));
}

TEST_CASE("adam rejects non-finite gradients with the flat index") {
  Mlp net = make_net({2, 2}, OutputHead::Linear, 0.0, 64);
  AdamState opt(net, {});
  ParamGrads grads = net.zero_grads();
  grads[0].w(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step(net, grads);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.index == 1);  // column-major offset of w(1,0)
  }
  CHECK(opt.step_count() == 0);
}

TEST_CASE("weight decay enters the gradient, biases exempt") {
  Mlp net = make_net({1, 1}, OutputHead::Linear, 0.0, 65);
  net.layers()[0].w(0, 0) = 2.0;
  net.layers()[0].b(0) = 2.0;
  AdamState opt(net, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.5});
  opt.step(net, net.zero_grads());
  CHECK(net.layers()[0].w(0, 0) < 2.0);
  CHECK(net.layers()[0].b(0) == 2.0);
}

TEST_CASE("kaiming-uniform init respects the fan-in bound, biases zero") {
  Mlp net = make_net({10, 20, 5}, OutputHead::Linear, 0.0, 66);
  const double bound0 = std::sqrt(6.0 / 10.0);
  const double bound1 = std::sqrt(6.0 / 20.0);
  CHECK(net.layers()[0].w.cwiseAbs().maxCoeff() <= bound0);
  CHECK(net.layers()[1].w.cwiseAbs().maxCoeff() <= bound1);
  CHECK(net.layers()[0].b.cwiseAbs().maxCoeff() == 0.0);
  // not degenerate
  CHECK(net.layers()[0].w.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("json snapshot round-trips the forward function") {
  Mlp net = make_net({3, 7, 2}, OutputHead::Softmax, 0.1, 67);
  const Mlp copy = Mlp::from_json(net.to_json());
  const MatrixXd x = random_input(4, 3, 68);
  CHECK(net.forward_eval(x) == copy.forward_eval(x));
  CHECK(copy.dropout() == net.dropout());
}

}  // TEST_SUITE
