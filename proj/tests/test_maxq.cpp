#include <doctest.h>

#include <cmath>

#include "afu/envs.hpp"
#include "afu/error.hpp"
#include "afu/gradcheck.hpp"
#include "afu/maxq.hpp"

using namespace afu;
using namespace afu::maxq;

namespace {

// V(s) = bias_v and A(s, a) = bias_a: constant nets with a single trainable bias
// after a zero hidden layer, so worked examples can be set exactly.
MaxQPair constant_pair(double v, double adv, double rho) {
  MaxQPair p{nn::Mlp::zeros("value", {1, 2, 1}), nn::Mlp::zeros("advantage", {2, 2, 1}), rho};
  p.value.bias(1)(0) = v;
  p.advantage.bias(1)(0) = adv;
  return p;
}

double value_bias_grad(const VaLoss& l, const MaxQPair& p) {
  return l.value_grads.values(p.value.num_params() - 1);
}

}  // namespace

TEST_CASE("indicator") {
  CHECK(indicator(1.0, -0.5, 1.2) == 1);
  CHECK(indicator(1.0, -0.5, 0.3) == 0);
  CHECK(indicator(1.0, -0.5, 0.5) == 0);
}

TEST_CASE("z_loss") {
  CHECK(z_loss(0.7, -0.5) == doctest::Approx(0.04));
  CHECK(z_loss(-0.2, -0.5) == doctest::Approx(0.29));
  CHECK(z_loss(0.0, 0.0) == 0.0);
  // Branch at x = 0 belongs to the (x + y)^2 case.
  CHECK(z_loss(0.0, 0.3) == doctest::Approx(0.09));
  const ZGrad g1 = z_loss_grad(0.7, -0.5);
  CHECK(g1.dx == doctest::Approx(0.4));
  CHECK(g1.dy == doctest::Approx(0.4));
  const ZGrad g2 = z_loss_grad(-0.2, -0.5);
  CHECK(g2.dx == doctest::Approx(-0.4));
  CHECK(g2.dy == doctest::Approx(-1.0));
}

TEST_CASE("upsilon keeps the value and scales only when the indicator fires") {
  const Upsilon off = upsilon(1.0, -0.5, 0.3, 0.3);
  CHECK(off.value == 1.0);
  CHECK(off.v_grad_scale == 1.0);
  const Upsilon on = upsilon(1.0, -0.5, 1.2, 0.3);
  CHECK(on.value == 1.0);
  CHECK(on.v_grad_scale == doctest::Approx(0.7));
  const Upsilon tiny = upsilon(1.0, -0.5, 1.2, 1e-9);
  CHECK(tiny.v_grad_scale == doctest::Approx(1.0));

  const MaxQPair p = constant_pair(1.0, -0.5, 0.3);
  const Upsilon via_nets =
      upsilon_forward_and_grad_scale(Vector::Zero(1), Vector::Zero(1), 1.2, p);
  CHECK(via_nets.value == doctest::Approx(1.0));
  CHECK(via_nets.v_grad_scale == doctest::Approx(0.7));
}

TEST_CASE("lambda_va_loss worked cases") {
  const Matrix s = Matrix::Zero(1, 1);
  const Matrix a = Matrix::Zero(1, 1);
  const double rho = 0.3;

  SUBCASE("target below V + A: no scaling") {
    const MaxQPair p = constant_pair(1.0, -0.5, rho);
    const VaLoss l = lambda_va_loss(s, a, Vector::Constant(1, 0.3), p);
    CHECK(l.loss == doctest::Approx(0.04));
    CHECK(l.num_scaled == 0);
    // dZ/dx = 2 (x + y) = 0.4, unscaled.
    CHECK(value_bias_grad(l, p) == doctest::Approx(0.4));
  }
  SUBCASE("target above V + A: V gradient scaled by 1 - rho") {
    const MaxQPair p = constant_pair(1.0, -0.5, rho);
    const VaLoss l = lambda_va_loss(s, a, Vector::Constant(1, 1.2), p);
    CHECK(l.loss == doctest::Approx(0.29));
    CHECK(l.num_scaled == 1);
    CHECK(value_bias_grad(l, p) == doctest::Approx((1.0 - rho) * 2.0 * (1.0 - 1.2)));
    CHECK(l.advantage_grads.values(p.advantage.num_params() - 1) == doctest::Approx(-1.0));
  }
  SUBCASE("empty batch") {
    const MaxQPair p = constant_pair(1.0, -0.5, rho);
    CHECK_THROWS_AS(lambda_va_loss(Matrix(1, 0), Matrix(1, 0), Vector(0), p), ContractError);
  }
}

TEST_CASE("downward pressure: V update is exactly (1 - rho) of the unscaled one") {
  Rng rng(4);
  MaxQPair p = MaxQPair::make(2, 1, {8, 8}, 0.25, rng);
  const Matrix s = Matrix::Random(2, 16);
  const Matrix a = Matrix::Random(1, 16);
  // Targets far above any V + A: the indicator fires everywhere.
  const Vector t = Vector::Constant(16, 50.0);
  const VaLoss scaled = lambda_va_loss(s, a, t, p);
  REQUIRE(scaled.num_scaled == 16);
  MaxQPair plain = p;
  plain.rho = 1e-300;  // scaling disappears; same loss surface otherwise
  const VaLoss unscaled = lambda_va_loss(s, a, t, plain);
  CHECK(scaled.loss == unscaled.loss);
  const Vector expected = 0.75 * unscaled.value_grads.values;
  CHECK((scaled.value_grads.values - expected).cwiseAbs().maxCoeff() <=
        1e-14 * expected.cwiseAbs().maxCoeff());
  CHECK(scaled.advantage_grads.values == unscaled.advantage_grads.values);
}

TEST_CASE("lambda_va_loss gradient matches finite differences") {
  const auto r = gradcheck::check_lambda_va_loss(20, 21);
  INFO("worst relative error " << r.worst_relative_error);
  CHECK(r.passed);
}

TEST_CASE("rho must lie in (0, 1)") {
  Rng rng(1);
  MaxQPair p = MaxQPair::make(1, 1, {4}, 0.3, rng);
  CHECK_NOTHROW(p.validate());
  p.rho = 1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.rho = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("expectile_loss") {
  // V is a constant 0, so u = target.
  const nn::Mlp v = nn::Mlp::zeros("value", {1, 2, 1});
  const Matrix s = Matrix::Zero(1, 1);
  CHECK(expectile_loss(s, Vector::Constant(1, 2.0), v, 0.5).loss == doctest::Approx(2.0));
  CHECK(expectile_loss(s, Vector::Constant(1, 1.0), v, 0.9).loss == doctest::Approx(0.9));
  CHECK(expectile_loss(s, Vector::Constant(1, -1.0), v, 0.9).loss == doctest::Approx(0.1));
  CHECK_THROWS_AS(expectile_loss(s, Vector::Constant(1, 1.0), v, 1.0), ConfigError);
  CHECK_THROWS_AS(expectile_loss(s, Vector::Constant(1, 1.0), v, 0.0), ConfigError);
}

TEST_CASE("expectile at 0.5 is half the mean squared error") {
  Rng rng(8);
  const nn::Mlp v = nn::Mlp::make("value", 3, 1, {8, 8}, rng, 1.0);
  const Matrix s = Matrix::Random(3, 32);
  const Vector t = Vector::Random(32) * 3.0;
  const double mse = (t - v.forward(s).row(0).transpose()).squaredNorm() / 32.0;
  CHECK(expectile_loss(s, t, v, 0.5).loss == doctest::Approx(0.5 * mse).epsilon(1e-14));
}

TEST_CASE("expectile gradient matches finite differences") {
  CHECK(gradcheck::check_expectile_loss(20, 31).passed);
}

TEST_CASE("toy method names") {
  CHECK(parse_toy_method("afu") == ToyMethod::kAfu);
  CHECK(parse_toy_method("expectile") == ToyMethod::kExpectile);
  CHECK_THROWS_AS(parse_toy_method("sql"), ConfigError);
}

TEST_CASE("toy benchmark: short afu run, grid and soft sign constraint") {
  ToyOptions o;
  o.steps = 1500;
  o.hidden = {64, 64};
  o.learning_rate = 1e-3;
  o.seed = 3;
  const ToyResult r = run_toy_benchmark(o);
  REQUIRE(r.states.size() == 201);
  CHECK(r.states.front() == -1.0);
  CHECK(r.states.back() == 1.0);
  for (std::size_t i = 0; i < r.states.size(); ++i) {
    CHECK(r.true_max[i] == doctest::Approx(std::sin(4.0 * r.states[i]) + 0.7));
    CHECK(r.residuals[i] == doctest::Approx(r.estimates[i] - r.true_max[i]));
  }
  CHECK(r.mean_abs_residual < 0.3);

  // A is near zero at the maximizing action a = 0 and not clearly positive elsewhere.
  REQUIRE(r.advantage.has_value());
  double worst_at_argmax = 0.0, max_elsewhere = -1e9;
  for (double s = -1.0; s <= 1.0; s += 0.1) {
    for (double a = -1.0; a <= 1.0; a += 0.1) {
      Matrix sa(2, 1);
      sa << s, a;
      const double adv = r.advantage->forward(sa)(0, 0);
      if (std::abs(a) < 1e-9) worst_at_argmax = std::max(worst_at_argmax, std::abs(adv));
      max_elsewhere = std::max(max_elsewhere, adv);
    }
  }
  CHECK(worst_at_argmax < 0.3);
  CHECK(max_elsewhere < 0.3);
}

TEST_CASE("toy benchmark rejects bad options") {
  ToyOptions o;
  o.steps = 0;
  CHECK_THROWS_AS(run_toy_benchmark(o), ConfigError);
}
