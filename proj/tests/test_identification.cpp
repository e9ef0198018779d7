#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sor/errors.hpp>
#include <sor/identification.hpp>
#include <sor/propensity.hpp>
#include <sor/rng.hpp>

using namespace sor;

namespace {

// Binary-outcome fixture with a single covariate point:
//   f(y) = (0.6, 0.4) at y = (0, 1),
//   pi1 = expit(-0.5 + 0.7 y), pi2 = expit(0.3 + 0.7 y).
// The shared log odds ratio is 0.7 and the baseline shift between the calls
// is 0.3 - (-0.5) = 0.8, which is the root the solver must find.
DiscreteJoint toy_joint() {
  DiscreteJoint j;
  j.x_points = {Eigen::VectorXd::Constant(1, 1.0)};
  j.x_mass = Eigen::VectorXd::Constant(1, 1.0);
  j.y_values = Eigen::Vector2d(0.0, 1.0);
  j.f_y_given_x.resize(1, 2);
  j.f_y_given_x << 0.6, 0.4;
  j.pi1.resize(1, 2);
  j.pi1 << expit(-0.5), expit(0.2);
  j.pi2.resize(1, 2);
  j.pi2 << expit(0.3), expit(1.0);
  return j;
}

// Randomized valid joint: ny outcome levels, nx covariate points, logistic
// response models with a shared linear odds ratio.
DiscreteJoint random_joint(std::uint64_t seed, int nx = 3, int ny = 5) {
  SplitMix64 rng(seed);
  DiscreteJoint j;
  j.y_values.resize(ny);
  for (int k = 0; k < ny; ++k) j.y_values[k] = -1.0 + 2.0 * k / (ny - 1.0);
  j.x_mass.resize(nx);
  for (int i = 0; i < nx; ++i) j.x_mass[i] = 0.2 + rng.uniform01();
  j.x_mass /= j.x_mass.sum();
  j.f_y_given_x.resize(nx, ny);
  j.pi1.resize(nx, ny);
  j.pi2.resize(nx, ny);
  const double gamma = 1.2 * rng.uniform_pm1();
  for (int i = 0; i < nx; ++i) {
    j.x_points.push_back(Eigen::VectorXd::Constant(1, static_cast<double>(i)));
    const double a1 = 0.8 * rng.uniform_pm1() - 0.3;
    const double a2 = a1 + 0.2 + 1.3 * rng.uniform01();  // second call easier
    double tot = 0.0;
    for (int k = 0; k < ny; ++k) {
      j.f_y_given_x(i, k) = 0.05 + rng.uniform01();
      tot += j.f_y_given_x(i, k);
      j.pi1(i, k) = expit(a1 + gamma * j.y_values[k]);
      j.pi2(i, k) = expit(a2 + gamma * j.y_values[k]);
    }
    j.f_y_given_x.row(i) /= tot;
  }
  return j;
}

}  // namespace

TEST_CASE("observed tables match the frozen fixture arithmetic") {
  const auto obs = observed_tables(toy_joint());
  CHECK(obs.f_y_r1(0, 0) == doctest::Approx(0.22652440127888726).epsilon(1e-13));
  CHECK(obs.f_y_r1(0, 1) == doctest::Approx(0.21993359892499115).epsilon(1e-13));
  CHECK(obs.f_y_r2_r1c(0, 0) == doctest::Approx(0.2145402628970972).epsilon(1e-13));
  CHECK(obs.f_y_r2_r1c(0, 1) == doctest::Approx(0.13163908722891637).epsilon(1e-13));
  CHECK(obs.f_nonresp[0] == doctest::Approx(0.20736264967010798).epsilon(1e-13));
  CHECK_NOTHROW(obs.validate());
}

TEST_CASE("identifying map hits the frozen value and the nonresponse odds") {
  const auto obs = observed_tables(toy_joint());
  const double L = l_of_d(obs, 0, 0.8);
  CHECK(L == doctest::Approx(0.599003521136155).epsilon(1e-12));
  // at the true shift, L(d) equals f(R2=0|R1=0,x)/f(R2=1|R1=0,x)
  const double callback_mass = obs.f_y_r2_r1c.row(0).sum();
  CHECK(L == doctest::Approx(obs.f_nonresp[0] / callback_mass).epsilon(1e-12));
}

TEST_CASE("identifying map is strictly decreasing in the baseline shift") {
  const auto obs = observed_tables(toy_joint());
  double prev = l_of_d(obs, 0, -0.05);
  for (double d = 0.05; d <= 4.0; d += 0.1) {
    const double cur = l_of_d(obs, 0, d);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("baseline-shift solver recovers the between-call shift") {
  const auto obs = observed_tables(toy_joint());
  const auto res = solve_d(obs, 0);
  CHECK(res.d == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(res.monotone_audit);
  CHECK(res.iterations > 0);
  // feasibility boundary (frozen): max_y log of callback/first-call density
  CHECK(res.lower_bracket ==
        doctest::Approx(-0.05435524446852715).epsilon(1e-6));
  CHECK(res.upper_bracket > res.d);
  CHECK(res.lower_bracket < res.d);
}

TEST_CASE("restriction margins match the frozen fixture") {
  const auto obs = observed_tables(toy_joint());
  const auto at_root = check_restriction(obs, 0.8);
  CHECK(at_root.ok);
  CHECK(at_root.min_margin == doctest::Approx(0.289599063451318).epsilon(1e-12));
  const auto far_low = check_restriction(obs, -10.0);
  CHECK(!far_low.ok);
  CHECK(far_low.min_margin ==
        doctest::Approx(-0.21452997870518967).epsilon(1e-12));
}

TEST_CASE("full recovery returns the generating model on the fixture") {
  const auto obs = observed_tables(toy_joint());
  const auto rec = recover_model(obs);
  REQUIRE(rec.d.size() == 1);
  CHECK(rec.d[0] == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(rec.pi1(0, 0) == doctest::Approx(expit(-0.5)).epsilon(1e-9));
  CHECK(rec.pi1(0, 1) == doctest::Approx(expit(0.2)).epsilon(1e-9));
  CHECK(rec.pi2(0, 0) == doctest::Approx(expit(0.3)).epsilon(1e-9));
  CHECK(rec.pi2(0, 1) == doctest::Approx(expit(1.0)).epsilon(1e-9));
  CHECK(rec.f_y_given_x(0, 0) == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(rec.f_y_given_x(0, 1) == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("recovery round-trips randomized generating models") {
  for (std::uint64_t seed : {11u, 12u, 13u, 14u, 15u, 16u, 17u, 18u}) {
    const auto joint = random_joint(seed);
    const auto obs = observed_tables(joint);
    const auto rec = recover_model(obs);
    const double err = std::max(
        {(rec.pi1 - joint.pi1).cwiseAbs().maxCoeff(),
         (rec.pi2 - joint.pi2).cwiseAbs().maxCoeff(),
         (rec.f_y_given_x - joint.f_y_given_x).cwiseAbs().maxCoeff()});
    CHECK(err <= 1e-8);
    for (const auto& det : rec.details) CHECK(det.monotone_audit);
  }
}

TEST_CASE("model-incompatible tables are rejected") {
  // a first-call density of zero where the callback density is positive
  // violates the testable implication; no baseline shift can rationalize it
  auto obs = observed_tables(toy_joint());
  const double moved = obs.f_y_r1(0, 0);
  obs.f_y_r1(0, 0) = 0.0;
  obs.f_nonresp[0] += moved;  // keep total mass at 1
  CHECK_NOTHROW(obs.validate());
  CHECK_THROWS_AS((void)solve_d(obs, 0), SolverError);
  CHECK_THROWS_AS((void)recover_model(obs), SolverError);
}

TEST_CASE("malformed tables fail validation") {
  SUBCASE("joint with propensity at the boundary") {
    auto j = toy_joint();
    j.pi1(0, 0) = 1.0;
    CHECK_THROWS_AS(j.validate(), ConfigError);
  }
  SUBCASE("joint with rows not summing to one") {
    auto j = toy_joint();
    j.f_y_given_x(0, 0) = 0.7;  // 0.7 + 0.4 != 1
    CHECK_THROWS_AS(j.validate(), ConfigError);
  }
  SUBCASE("observed with wrong total mass") {
    auto obs = observed_tables(toy_joint());
    obs.f_nonresp[0] += 0.1;
    CHECK_THROWS_AS(obs.validate(), ConfigError);
  }
}
