#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sor/errors.hpp>
#include <sor/propensity.hpp>
#include <sor/types.hpp>

using namespace sor;

TEST_CASE("expit stays finite, bounded, and monotone across the safe range") {
  double prev = -1.0;
  for (double t = -700.0; t <= 700.0; t += 3.5) {
    const double v = expit(t);
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
    CHECK(v >= prev);  // non-decreasing
    prev = v;
  }
  // strictly increasing where doubles can resolve the difference
  prev = expit(-30.0);
  for (double t = -30.0 + 0.25; t <= 30.0; t += 0.25) {
    const double v = expit(t);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("expit pinned values and tail accuracy") {
  CHECK(expit(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  // values frozen from an independent computation
  CHECK(expit(-0.5) == doctest::Approx(0.37754066879814546).epsilon(1e-14));
  CHECK(expit(0.2) == doctest::Approx(0.5498339973124778).epsilon(1e-14));
  CHECK(expit(0.3) == doctest::Approx(0.574442516811659).epsilon(1e-14));
  CHECK(expit(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(1.0 - expit(40.0) <= 1e-17);
  CHECK(expit(-40.0) > 0.0);
  // complement identity
  for (double t : {-12.0, -3.0, -0.7, 0.0, 0.4, 2.2, 18.0})
    CHECK(expit(-t) == doctest::Approx(1.0 - expit(t)).epsilon(1e-14));
}

TEST_CASE("logit inverts expit and rejects arguments outside (0,1)") {
  // For t >> 0, expit(t) rounds to 1 - c where c is known only to about one
  // ulp of 1, so the recoverable accuracy of the round trip decays like e^t;
  // keep the tight relative check inside the window where it is attainable
  // and bound the far tail by the complement-rounding floor instead.
  for (double t : {-20.0, -5.0, -1.0, 0.0, 0.3, 4.0, 15.0})
    CHECK(logit(expit(t)) == doctest::Approx(t).epsilon(1e-9));
  CHECK(std::abs(logit(expit(20.0)) - 20.0) <= 3e-7);
  CHECK_THROWS_AS((void)logit(0.0), std::domain_error);
  CHECK_THROWS_AS((void)logit(1.0), std::domain_error);
  CHECK_THROWS_AS((void)logit(-0.2), std::domain_error);
  CHECK_THROWS_AS((void)logit(1.2), std::domain_error);
}

TEST_CASE("softplus identities and overflow safety") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(std::isfinite(softplus(700.0)));
  CHECK(softplus(700.0) == doctest::Approx(700.0).epsilon(1e-12));
  CHECK(softplus(-700.0) >= 0.0);
  CHECK(softplus(-700.0) < 1e-300);
  for (double t = -30.0; t <= 30.0; t += 0.5)
    CHECK(softplus(t) - softplus(-t) == doctest::Approx(t).epsilon(1e-12));
}

namespace {

WorkingModelSpec linear_spec() {
  WorkingModelSpec spec;
  spec.a1 = x_map("linear");
  spec.a2 = x_map("linear");
  spec.outcome = x_map("linear");
  return spec;
}

}  // namespace

TEST_CASE("propensities compose the two working logistic models exactly") {
  const auto spec = linear_spec();
  ParameterState st;
  st.alpha1 = Eigen::Vector3d(-1.0, 0.5, 0.2);
  st.alpha2 = Eigen::Vector3d(1.0, 0.5, 0.2);
  st.gamma = Eigen::VectorXd::Constant(1, 0.16);
  const Eigen::Vector3d x(1.0, 0.4, -0.9);
  const double y = 0.7;

  const auto pv = propensities(x, y, spec, st);
  const double lin1 = st.alpha1.dot(x) + 0.16 * y;
  const double lin2 = st.alpha2.dot(x) + 0.16 * y;
  CHECK(pv.pi1 == doctest::Approx(expit(lin1)).epsilon(1e-15));
  CHECK(pv.pi2 == doctest::Approx(expit(lin2)).epsilon(1e-15));
  // overall response composed exactly as written
  CHECK(pv.p2 == pv.pi1 + pv.pi2 * (1.0 - pv.pi1));
  CHECK(pv.p2 >= pv.pi1);
  CHECK(pv.p2 <= 1.0);
}

TEST_CASE("propensities rejects parameter/design dimension mismatches") {
  const auto spec = linear_spec();
  ParameterState st;
  st.alpha1 = Eigen::Vector2d(-1.0, 0.5);  // x has three features
  st.alpha2 = Eigen::Vector3d(1.0, 0.5, 0.2);
  st.gamma = Eigen::VectorXd::Constant(1, 0.16);
  const Eigen::Vector3d x(1.0, 0.4, -0.9);
  CHECK_THROWS_AS((void)propensities(x, 0.7, spec, st), ConfigError);
}

TEST_CASE("odds-ratio function is linear in y and vanishes at y = 0") {
  const auto spec = linear_spec();
  const Eigen::VectorXd gamma = Eigen::VectorXd::Constant(1, 0.37);
  const Eigen::Vector3d x(1.0, -0.2, 0.8);
  CHECK(odds_ratio(x, 0.0, spec, gamma) == 0.0);
  for (double y : {-2.0, -0.5, 1.0, 3.7})
    CHECK(odds_ratio(x, y, spec, gamma) == doctest::Approx(0.37 * y).epsilon(1e-15));
}

TEST_CASE("shared odds ratio equals the log odds shift of both calls") {
  // stableness of resistance: for both calls,
  // logit pi_k(x, y) - logit pi_k(x, 0) = Gamma(x, y)
  const auto spec = linear_spec();
  ParameterState st;
  st.alpha1 = Eigen::Vector3d(-0.4, 0.3, -0.6);
  st.alpha2 = Eigen::Vector3d(0.9, -0.2, 0.1);
  st.gamma = Eigen::VectorXd::Constant(1, -0.23);
  const Eigen::Vector3d x(1.0, 0.25, 0.5);
  for (double y : {-1.5, 0.4, 2.0}) {
    const auto at_y = propensities(x, y, spec, st);
    const auto at_0 = propensities(x, 0.0, spec, st);
    const double gamma_xy = odds_ratio(x, y, spec, st.gamma);
    CHECK(logit(at_y.pi1) - logit(at_0.pi1) == doctest::Approx(gamma_xy).epsilon(1e-10));
    CHECK(logit(at_y.pi2) - logit(at_0.pi2) == doctest::Approx(gamma_xy).epsilon(1e-10));
  }
}
