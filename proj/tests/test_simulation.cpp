#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sor/errors.hpp>
#include <sor/propensity.hpp>
#include <sor/simulation.hpp>
#include <sor/types.hpp>

using namespace sor;

namespace {

Eigen::VectorXd v3(double a, double b, double c) {
  return Eigen::Vector3d(a, b, c);
}

Eigen::VectorXd v2(double a, double b) { return Eigen::Vector2d(a, b); }

}  // namespace

TEST_CASE("named study designs carry the pinned parameters") {
  const auto tt = ScenarioSpec::named("TT");
  CHECK(tt.alpha1 == v3(-1.0, 0.5, 0.2));
  CHECK(tt.alpha2 == v3(1.0, 0.5, 0.2));
  CHECK(tt.beta == v3(2.5, 2.3, 1.6));
  CHECK(tt.gamma == 0.16);
  CHECK(tt.sigma == 1.2);
  CHECK(tt.w1 == XMapKind::Linear);
  CHECK(tt.w2 == XMapKind::Linear);
  CHECK(tt.law == CovariateLaw::UnitSquare);

  const auto ft = ScenarioSpec::named("FT");
  CHECK(ft.alpha1 == v3(-0.3, -0.7, 0.7));
  CHECK(ft.alpha2 == v3(-0.3, 1.9, 0.9));
  CHECK(ft.beta == v3(-1.0, 5.4, 4.0));
  CHECK(ft.gamma == 0.1);
  CHECK(ft.sigma == 2.0);
  CHECK(ft.w1 == XMapKind::Squares);  // second-call model on squared features
  CHECK(ft.w2 == XMapKind::Linear);

  const auto tf = ScenarioSpec::named("TF");
  CHECK(tf.alpha1 == v3(-1.0, 1.0, -0.1));
  CHECK(tf.alpha2 == v3(0.5, 1.0, -0.1));
  CHECK(tf.beta == v3(-0.5, 5.0, -1.0));
  CHECK(tf.gamma == 0.5);
  CHECK(tf.sigma == 0.4);
  CHECK(tf.w1 == XMapKind::Linear);
  CHECK(tf.w2 == XMapKind::Squares);  // outcome mean on squared features

  const auto ff = ScenarioSpec::named("FF");
  CHECK(ff.alpha1 == v3(-0.3, -0.5, 1.0));
  CHECK(ff.alpha2 == v3(-0.4, 0.8, 0.0));
  CHECK(ff.beta == v3(-1.5, 4.0, 3.0));
  CHECK(ff.gamma == 0.25);
  CHECK(ff.sigma == 0.25);
  CHECK(ff.w1 == XMapKind::Squares);
  CHECK(ff.w2 == XMapKind::Squares);

  const auto f1 = ScenarioSpec::named("FIG1-i");
  CHECK(f1.law == CovariateLaw::UnitInterval);
  CHECK(f1.alpha1 == v2(-0.4, 0.8));
  CHECK(f1.alpha2 == v2(-0.4, 0.8));
  CHECK(f1.beta == v2(-1.6, 0.6));
  CHECK(f1.gamma == 0.5);
  CHECK(f1.sigma == 0.6);

  const auto f2 = ScenarioSpec::named("FIG1-ii");
  CHECK(f2.alpha1 == v2(-0.4, -0.8));  // first-call slope flipped
  CHECK(f2.alpha2 == v2(-0.4, 0.8));
  CHECK(f2.beta == f1.beta);
  CHECK(f2.gamma == f1.gamma);
  CHECK(f2.sigma == f1.sigma);

  CHECK_THROWS_AS((void)ScenarioSpec::named("GG"), ConfigError);
}

TEST_CASE("scenario validation rejects malformed dimensions") {
  auto sc = ScenarioSpec::named("TT");
  sc.alpha1 = v2(0.0, 0.0);
  CHECK_THROWS_AS(sc.validate(), ConfigError);
}

TEST_CASE("outcome density tables are normalized with monotone cdf") {
  for (const char* name : {"TT", "FT", "TF", "FF", "FIG1-i"}) {
    const auto sc = ScenarioSpec::named(name);
    Eigen::VectorXd x = sc.xdim() == 3 ? v3(1.0, 0.3, -0.6) : v2(1.0, 0.3);
    const auto tab = conditional_outcome_density(sc, x);
    REQUIRE(tab.y.size() == tab.pdf.size());
    REQUIRE(tab.y.size() == tab.cdf.size());

    double trap = 0.0;
    double mean = 0.0;
    for (int i = 1; i < tab.y.size(); ++i) {
      const double h = tab.y[i] - tab.y[i - 1];
      trap += 0.5 * h * (tab.pdf[i] + tab.pdf[i - 1]);
      mean += 0.5 * h * (tab.y[i] * tab.pdf[i] + tab.y[i - 1] * tab.pdf[i - 1]);
      CHECK(tab.cdf[i] >= tab.cdf[i - 1]);
      CHECK(tab.pdf[i] >= 0.0);
    }
    CHECK(trap == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tab.cdf[tab.cdf.size() - 1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tab.mean == doctest::Approx(mean).epsilon(1e-9));
  }
}

TEST_CASE("density times response factors recovers the Gaussian callback law") {
  // f(y|x) * (1 - pi1) * pi2, renormalized on the same grid, must equal the
  // Gaussian the respondent model asserts -- including when the stableness
  // break is active (the second call then uses gamma + delta).
  for (double delta : {0.0, 0.3}) {
    auto sc = ScenarioSpec::named("TF");
    sc.sensitivity_delta = delta;
    const Eigen::VectorXd x = v3(1.0, -0.4, 0.8);
    const auto tab = conditional_outcome_density(sc, x);

    const double a1 = sc.alpha1.dot(x);
    const Eigen::VectorXd w1f = XMap{sc.w1, "w1"}(x);
    const Eigen::VectorXd w2f = XMap{sc.w2, "w2"}(x);
    const double a2 = sc.alpha2.dot(w1f);
    const double m = sc.beta.dot(w2f);

    const int n = static_cast<int>(tab.y.size());
    Eigen::VectorXd g(n), gauss(n);
    for (int i = 0; i < n; ++i) {
      const double y = tab.y[i];
      const double pi1 = expit(a1 + sc.gamma * y);
      const double pi2 = expit(a2 + (sc.gamma + delta) * y);
      g[i] = tab.pdf[i] * (1.0 - pi1) * pi2;
      const double z = (y - m) / sc.sigma;
      gauss[i] = std::exp(-0.5 * z * z);
    }
    // trapezoid-normalize both on the shared grid so grid error cancels
    double tg = 0.0, tn = 0.0;
    for (int i = 1; i < n; ++i) {
      const double h = tab.y[i] - tab.y[i - 1];
      tg += 0.5 * h * (g[i] + g[i - 1]);
      tn += 0.5 * h * (gauss[i] + gauss[i - 1]);
    }
    double sup = 0.0, peak = 0.0;
    for (int i = 0; i < n; ++i) {
      sup = std::max(sup, std::abs(g[i] / tg - gauss[i] / tn));
      peak = std::max(peak, gauss[i] / tn);
    }
    CHECK(sup <= 1e-9 * peak);
  }
}

TEST_CASE("zero odds ratio collapses the density to the plain Gaussian") {
  auto sc = ScenarioSpec::named("TT");
  sc.gamma = 0.0;
  const Eigen::VectorXd x = v3(1.0, 0.2, 0.9);
  const auto tab = conditional_outcome_density(sc, x);
  const double m = sc.beta.dot(x);

  const int n = static_cast<int>(tab.y.size());
  Eigen::VectorXd gauss(n);
  for (int i = 0; i < n; ++i) {
    const double z = (tab.y[i] - m) / sc.sigma;
    gauss[i] = std::exp(-0.5 * z * z);
  }
  double tn = 0.0;
  for (int i = 1; i < n; ++i)
    tn += 0.5 * (tab.y[i] - tab.y[i - 1]) * (gauss[i] + gauss[i - 1]);
  for (int i = 0; i < n; i += 97)
    CHECK(tab.pdf[i] == doctest::Approx(gauss[i] / tn).epsilon(1e-9));
  CHECK(tab.mean == doctest::Approx(m).epsilon(1e-9));
}

TEST_CASE("density grid sizing fails loudly when the range cannot cover") {
  auto sc = ScenarioSpec::named("TT");
  sc.range_sds = 0.5;    // far too narrow
  sc.max_doublings = 0;  // and not allowed to grow
  CHECK_THROWS_AS((void)conditional_outcome_density(sc, v3(1.0, 0.0, 0.0)),
                  ConfigError);
}

TEST_CASE("population means match independently computed values") {
  // quadrature cross-check values (64-node covariate rule, dense outcome grid)
  CHECK(true_mean(ScenarioSpec::named("TT")) ==
        doctest::Approx(2.5352583847875496).epsilon(2e-6));
  CHECK(true_mean(ScenarioSpec::named("FT")) ==
        doctest::Approx(-0.9907219908263446).epsilon(2e-6));
  CHECK(true_mean(ScenarioSpec::named("TF")) ==
        doctest::Approx(0.8371317565585655).epsilon(2e-6));
  CHECK(true_mean(ScenarioSpec::named("FF")) ==
        doctest::Approx(0.8331902585324211).epsilon(2e-6));
  CHECK(true_mean(ScenarioSpec::named("FIG1-i")) ==
        doctest::Approx(-1.6914050742642666).epsilon(2e-6));
  CHECK(true_mean(ScenarioSpec::named("FIG1-ii")) ==
        doctest::Approx(-1.6942737336183307).epsilon(2e-6));
}

TEST_CASE("sampling is seed-deterministic and structurally valid") {
  const auto sc = ScenarioSpec::named("TT");
  const auto a = sample_dataset(sc, 500, 11);
  const auto b = sample_dataset(sc, 500, 11);
  const auto c = sample_dataset(sc, 500, 12);

  REQUIRE(a.n() == 500);
  CHECK(validate_dataset(a).empty());
  CHECK(a.covariate_names.size() == 3);
  CHECK(a.covariate_names[0] == "const");

  bool identical = true, differs = false;
  for (std::size_t i = 0; i < a.n(); ++i) {
    const auto& ra = a.records[i];
    const auto& rb = b.records[i];
    const auto& rc = c.records[i];
    if (ra.x != rb.x || ra.r1 != rb.r1 || ra.r2 != rb.r2 ||
        ra.y.has_value() != rb.y.has_value() ||
        (ra.y && *ra.y != *rb.y))
      identical = false;
    if (ra.x != rc.x) differs = true;
    CHECK(ra.x[0] == 1.0);
    CHECK(ra.y.has_value() == ra.r2);
    CHECK(ra.r2 >= ra.r1);
  }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("sampled response-pattern shares match the population shares") {
  struct Row {
    const char* name;
    double p1, p2;
  };
  // population values from 64-node covariate quadrature over the outcome law
  const Row rows[] = {
      {"TT", 0.3664, 0.8524},     {"FT", 0.4110, 0.7632},
      {"TF", 0.3713, 0.7638},     {"FF", 0.4754, 0.7346},
      {"FIG1-i", 0.2461, 0.4158}, {"FIG1-ii", 0.2312, 0.4223},
  };
  for (const auto& row : rows) {
    const auto d = sample_dataset(ScenarioSpec::named(row.name), 200000, 77);
    double s1 = 0, s2 = 0;
    for (const auto& r : d.records) {
      s1 += r.r1;
      s2 += r.r2;
    }
    const double n = static_cast<double>(d.n());
    CHECK(std::abs(s1 / n - row.p1) < 0.005);
    CHECK(std::abs(s2 / n - row.p2) < 0.005);
  }
}

TEST_CASE("replication study produces consistent, reproducible metrics") {
  const auto sc = ScenarioSpec::named("TT");
  const std::vector<Method> methods{Method::Cc, Method::Ipw};
  const auto out = run_replications(sc, methods, 20, 800, 5);

  CHECK(out.truth_mu ==
        doctest::Approx(true_mean(sc)).epsilon(1e-12));
  CHECK(out.truth_gamma == sc.gamma);

  // cc reports only the mean; the weighting method also reports the
  // odds-ratio coefficient
  REQUIRE(out.rows.size() == 3);
  int mu_rows = 0, gamma_rows = 0;
  const MetricRow* ipw_mu = nullptr;
  for (const auto& row : out.rows) {
    CHECK(row.scenario == "TT");
    CHECK(row.reps == 20);
    CHECK(row.coverage >= 0.0);
    CHECK(row.coverage <= 1.0);
    CHECK(row.mc_sd > 0.0);
    CHECK(row.usable);
    if (row.parameter == "mu") ++mu_rows;
    if (row.parameter == "gamma") {
      ++gamma_rows;
      CHECK(row.method == "ipw");
      CHECK(row.truth == sc.gamma);
    }
    if (row.method == "ipw" && row.parameter == "mu") ipw_mu = &row;
  }
  CHECK(mu_rows == 2);
  CHECK(gamma_rows == 1);
  REQUIRE(ipw_mu != nullptr);
  CHECK(std::abs(ipw_mu->bias) < 0.12);  // unbiased up to replication noise
  CHECK(ipw_mu->coverage >= 0.7);

  // per-replication rows agree with the aggregated bias
  REQUIRE(out.reps.size() == 40);
  double sum = 0.0;
  int m = 0;
  for (const auto& rr : out.reps)
    if (rr.method == "ipw" && rr.converged) {
      sum += rr.mu;
      ++m;
    }
  REQUIRE(m == 20 - ipw_mu->n_fail);
  CHECK(sum / m - out.truth_mu == doctest::Approx(ipw_mu->bias).epsilon(1e-10));

  const auto again = run_replications(sc, methods, 20, 800, 5);
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    CHECK(out.rows[i].bias == again.rows[i].bias);
    CHECK(out.rows[i].mc_sd == again.rows[i].mc_sd);
    CHECK(out.rows[i].coverage == again.rows[i].coverage);
  }
}
