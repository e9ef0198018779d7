#include "sor/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "sor/errors.hpp"
#include "sor/propensity.hpp"
#include "sor/reduce.hpp"
#include "sor/rng.hpp"

namespace sor {

namespace {

constexpr double kBoundaryFraction = 1e-12;

// Gauss–Legendre rule on [-1, 1] via the symmetric tridiagonal Jacobi matrix.
struct GaussLegendreRule {
  Eigen::VectorXd nodes, weights;
};

const GaussLegendreRule& gauss_legendre_64() {
  static GaussLegendreRule rule = [] {
    const int n = 64;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
      const double b = k / std::sqrt(4.0 * k * k - 1.0);
      jac(k, k - 1) = b;
      jac(k - 1, k) = b;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    GaussLegendreRule r;
    r.nodes = es.eigenvalues();
    r.weights.resize(n);
    for (int k = 0; k < n; ++k) {
      const double v0 = es.eigenvectors()(0, k);
      r.weights[k] = 2.0 * v0 * v0;
    }
    // enforce exact +/- symmetry
    for (int k = 0; k < n / 2; ++k) {
      const int j = n - 1 - k;
      const double a = 0.5 * (r.weights[k] + r.weights[j]);
      r.weights[k] = a;
      r.weights[j] = a;
      const double s = 0.5 * (r.nodes[j] - r.nodes[k]);
      r.nodes[k] = -s;
      r.nodes[j] = s;
    }
    return r;
  }();
  return rule;
}

// Record-independent grids for the factored outcome-density build
//   f(y|x) prop G(u) (1 + a E1(u)) (1 + b E2(u)),  u = y - beta'w2(x),
// with a = exp(alpha1'x + gamma m) and b = exp(-alpha2'w1 - (gamma+delta) m).
// One set of arrays per range-doubling level.
struct DensityGrids {
  struct Level {
    double half = 0, step = 0;
    Eigen::ArrayXd u, G, E1, E2;
  };
  std::vector<Level> levels;

  DensityGrids(const ScenarioSpec& sc) {
    const int N = sc.grid_points;
    const double g2 = sc.gamma + sc.sensitivity_delta;
    levels.resize(static_cast<std::size_t>(sc.max_doublings) + 1);
    for (std::size_t lv = 0; lv < levels.size(); ++lv) {
      Level& L = levels[lv];
      L.half = sc.range_sds * sc.sigma * std::pow(2.0, static_cast<double>(lv));
      L.step = 2.0 * L.half / (N - 1);
      L.u = Eigen::ArrayXd::LinSpaced(N, -L.half, L.half);
      L.G = (-L.u.square() / (2.0 * sc.sigma * sc.sigma)).exp();
      L.E1 = (sc.gamma * L.u).exp();
      L.E2 = (-g2 * L.u).exp();
    }
  }
};

struct Workspace {
  const ScenarioSpec& sc;
  DensityGrids grids;
  XMap w1map, w2map;
  double gamma2;  // second-call odds-ratio slope

  explicit Workspace(const ScenarioSpec& s)
      : sc(s), grids(s), gamma2(s.gamma + s.sensitivity_delta) {
    w1map.kind = sc.w1;
    w2map.kind = sc.w2;
  }

  double lin1(const Eigen::VectorXd& x) const { return sc.alpha1.dot(x); }
  double lin2(const Eigen::VectorXd& x) const {
    Eigen::VectorXd f(w1map.out_dim(static_cast<int>(x.size())));
    w1map.eval(x, f.data());
    return sc.alpha2.dot(f);
  }
  double mfun(const Eigen::VectorXd& x) const {
    Eigen::VectorXd f(w2map.out_dim(static_cast<int>(x.size())));
    w2map.eval(x, f.data());
    return sc.beta.dot(f);
  }

  // Builds the table at x into `out` (vectors reused across calls).
  void build(const Eigen::VectorXd& x, DensityTable& out) const {
    const int N = sc.grid_points;
    const double la1 = lin1(x), la2 = lin2(x), m = mfun(x);
    const double a = std::exp(la1 + sc.gamma * m);
    const double b = std::exp(-la2 - gamma2 * m);

    for (std::size_t lv = 0; lv < grids.levels.size(); ++lv) {
      const auto& L = grids.levels[lv];
      Eigen::ArrayXd f = L.G * (1.0 + a * L.E1) * (1.0 + b * L.E2);
      if (!f.allFinite()) {
        // log-space rebuild for extreme linear predictors
        Eigen::ArrayXd lf(N);
        for (int j = 0; j < N; ++j) {
          const double yj = m + L.u[j];
          lf[j] = -L.u[j] * L.u[j] / (2.0 * sc.sigma * sc.sigma) +
                  softplus(la1 + sc.gamma * yj) + softplus(-la2 - gamma2 * yj);
        }
        f = (lf - lf.maxCoeff()).exp();
      }
      const double peak = f.maxCoeff();
      if (!(peak > 0) || !f.allFinite())
        throw ConfigError("outcome density build failed at x");
      if (f[0] > kBoundaryFraction * peak || f[N - 1] > kBoundaryFraction * peak) {
        if (lv + 1 == grids.levels.size())
          throw ConfigError(
              "outcome density does not vanish inside the widest grid; raise "
              "range_sds or max_doublings");
        continue;
      }

      out.y.resize(N);
      out.pdf.resize(N);
      out.cdf.resize(N);
      out.y = (m + L.u).matrix();
      double total = 0, ysum = 0;
      out.cdf[0] = 0;
      for (int j = 1; j < N; ++j) {
        const double cell = 0.5 * (f[j - 1] + f[j]) * L.step;
        total += cell;
        out.cdf[j] = total;
        ysum += 0.5 * (out.y[j - 1] * f[j - 1] + out.y[j] * f[j]) * L.step;
      }
      out.pdf = (f / total).matrix();
      out.cdf /= total;
      out.mean = ysum / total;
      return;
    }
  }

  double sample_y(const DensityTable& t, double u01) const {
    const auto* begin = t.cdf.data();
    const auto* end = begin + t.cdf.size();
    const auto* it = std::upper_bound(begin, end, u01);
    auto j = static_cast<Eigen::Index>(it - begin);
    if (j <= 0) return t.y[0];
    if (j >= t.cdf.size()) return t.y[t.cdf.size() - 1];
    const double c0 = t.cdf[j - 1], c1 = t.cdf[j];
    if (!(c1 > c0)) return t.y[j];
    return t.y[j - 1] + (u01 - c0) / (c1 - c0) * (t.y[j] - t.y[j - 1]);
  }
};

Eigen::VectorXd draw_covariates(const ScenarioSpec& sc, SplitMix64& rng) {
  Eigen::VectorXd x(sc.xdim());
  x[0] = 1.0;
  switch (sc.law) {
    case CovariateLaw::UnitSquare:
      x[1] = rng.uniform_pm1();
      x[2] = rng.uniform_pm1();
      break;
    case CovariateLaw::UnitInterval:
      x[1] = rng.uniform_pm1();
      break;
    case CovariateLaw::IvPair: {
      const double z = rng.uniform_pm1();
      const double v = rng.uniform_pm1();
      x[1] = 0.5 * z + 0.5 * v;  // t
      x[2] = z;
      break;
    }
  }
  return x;
}

std::vector<std::string> covariate_names(const ScenarioSpec& sc) {
  switch (sc.law) {
    case CovariateLaw::UnitSquare: return {"const", "x1", "x2"};
    case CovariateLaw::UnitInterval: return {"const", "x1"};
    case CovariateLaw::IvPair: return {"const", "t", "z"};
  }
  return {};
}

}  // namespace

void ScenarioSpec::validate() const {
  const int xd = xdim();
  XMap m1, m2;
  m1.kind = w1;
  m2.kind = w2;
  if (alpha1.size() != xd)
    throw ConfigError("scenario: alpha1 must have dim " + std::to_string(xd));
  if (alpha2.size() != m1.out_dim(xd))
    throw ConfigError("scenario: alpha2 does not match the w1 design");
  if (beta.size() != m2.out_dim(xd))
    throw ConfigError("scenario: beta does not match the w2 design");
  if (!(sigma > 0)) throw ConfigError("scenario: sigma must be positive");
  if (grid_points < 16) throw ConfigError("scenario: grid_points too small");
  if (!(range_sds > 0)) throw ConfigError("scenario: range_sds must be positive");
  if (max_doublings < 0) throw ConfigError("scenario: max_doublings negative");
}

ScenarioSpec ScenarioSpec::named(const std::string& name) {
  ScenarioSpec sc;
  sc.name = name;
  auto v3 = [](double a, double b, double c) {
    Eigen::VectorXd v(3);
    v << a, b, c;
    return v;
  };
  auto v2 = [](double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
  };
  if (name == "TT") {
    sc.alpha1 = v3(-1, 0.5, 0.2);
    sc.alpha2 = v3(1, 0.5, 0.2);
    sc.beta = v3(2.5, 2.3, 1.6);
    sc.gamma = 0.16;
    sc.sigma = 1.2;
  } else if (name == "FT") {
    sc.alpha1 = v3(-0.3, -0.7, 0.7);
    sc.alpha2 = v3(-0.3, 1.9, 0.9);
    sc.beta = v3(-1, 5.4, 4);
    sc.gamma = 0.1;
    sc.sigma = 2;
    sc.w1 = XMapKind::Squares;
  } else if (name == "TF") {
    sc.alpha1 = v3(-1, 1, -0.1);
    sc.alpha2 = v3(0.5, 1, -0.1);
    sc.beta = v3(-0.5, 5, -1);
    sc.gamma = 0.5;
    sc.sigma = 0.4;
    sc.w2 = XMapKind::Squares;
  } else if (name == "FF") {
    sc.alpha1 = v3(-0.3, -0.5, 1);
    sc.alpha2 = v3(-0.4, 0.8, 0);
    sc.beta = v3(-1.5, 4, 3);
    sc.gamma = 0.25;
    sc.sigma = 0.25;
    sc.w1 = XMapKind::Squares;
    sc.w2 = XMapKind::Squares;
  } else if (name == "FIG1-i" || name == "FIG1-ii") {
    sc.law = CovariateLaw::UnitInterval;
    sc.alpha1 = v2(-0.4, name == "FIG1-i" ? 0.8 : -0.8);
    sc.alpha2 = v2(-0.4, 0.8);
    sc.beta = v2(-1.6, 0.6);
    sc.gamma = 0.5;
    sc.sigma = 0.6;
  } else {
    throw ConfigError("unknown scenario '" + name +
                      "' (expected TT, FT, TF, FF, FIG1-i, FIG1-ii)");
  }
  sc.validate();
  return sc;
}

DensityTable conditional_outcome_density(const ScenarioSpec& sc,
                                         const Eigen::VectorXd& x) {
  sc.validate();
  if (x.size() != sc.xdim()) throw ConfigError("covariate dim mismatch");
  Workspace ws(sc);
  DensityTable t;
  ws.build(x, t);
  return t;
}

Dataset sample_dataset(const ScenarioSpec& sc, std::size_t n, std::uint64_t seed) {
  sc.validate();
  const Workspace ws(sc);
  Dataset data;
  data.covariate_names = covariate_names(sc);
  data.records.resize(n);

  parallel_for_blocks(n, [&](std::size_t begin, std::size_t end) {
    DensityTable t;
    for (std::size_t i = begin; i < end; ++i) {
      SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      ObservationRecord rec;
      rec.x = draw_covariates(sc, rng);
      ws.build(rec.x, t);
      const double y = ws.sample_y(t, rng.uniform01());
      const double u1 = rng.uniform01();
      rec.r1 = u1 < expit(ws.lin1(rec.x) + sc.gamma * y);
      if (rec.r1) {
        rec.r2 = true;
      } else {
        const double u2 = rng.uniform01();
        rec.r2 = u2 < expit(ws.lin2(rec.x) + ws.gamma2 * y);
      }
      if (rec.r2) rec.y = y;
      data.records[i] = std::move(rec);
    }
  });
  return data;
}

double true_mean(const ScenarioSpec& sc) {
  sc.validate();
  const Workspace ws(sc);
  const GaussLegendreRule& gl = gauss_legendre_64();
  const int nq = static_cast<int>(gl.nodes.size());
  DensityTable t;
  Eigen::VectorXd x(sc.xdim());
  x[0] = 1.0;

  if (sc.law == CovariateLaw::UnitInterval) {
    double acc = 0;
    for (int i = 0; i < nq; ++i) {
      x[1] = gl.nodes[i];
      ws.build(x, t);
      acc += 0.5 * gl.weights[i] * t.mean;
    }
    return acc;
  }
  double acc = 0;
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < nq; ++j) {
      if (sc.law == CovariateLaw::UnitSquare) {
        x[1] = gl.nodes[i];
        x[2] = gl.nodes[j];
      } else {  // IvPair: z = nodes[i], v = nodes[j]
        x[1] = 0.5 * gl.nodes[i] + 0.5 * gl.nodes[j];
        x[2] = gl.nodes[i];
      }
      ws.build(x, t);
      acc += 0.25 * gl.weights[i] * gl.weights[j] * t.mean;
    }
  }
  return acc;
}

ReplicationMetrics run_replications(const ScenarioSpec& sc,
                                    const std::vector<Method>& methods,
                                    int reps, std::size_t n, std::uint64_t seed,
                                    const SolveOptions& solve_opts) {
  sc.validate();
  if (reps < 1) throw ConfigError("reps must be >= 1");
  ReplicationMetrics out;
  out.truth_mu = true_mean(sc);
  out.truth_gamma = sc.gamma;

  WorkingModelSpec wspec;  // linear designs on the stored covariates
  EstimateOptions eopts;
  eopts.solve = solve_opts;

  const auto nm = methods.size();
  std::vector<RepRow> rows(static_cast<std::size_t>(reps) * nm);

  parallel_for_blocks(static_cast<std::size_t>(reps),
                      [&](std::size_t begin, std::size_t end) {
    for (std::size_t rep = begin; rep < end; ++rep) {
      const Dataset data =
          sample_dataset(sc, n, derive_seed(seed, static_cast<std::uint64_t>(rep)));
      for (std::size_t k = 0; k < nm; ++k) {
        RepRow row;
        row.rep = static_cast<int>(rep);
        row.method = method_name(methods[k]);
        try {
          const EstimateReport r = estimate_mean(methods[k], data, wspec, eopts);
          row.converged = r.converged;
          if (r.converged) {
            row.mu = r.estimate[0];
            row.mu_se = r.se[0];
            for (const auto& nu : r.nuisance)
              if (nu.name == "gamma" || nu.name == "gamma[0]") {
                row.gamma = nu.estimate;
                row.gamma_se = nu.se;
              }
          }
        } catch (const SolverError&) {
          row.converged = false;
        } catch (const DataError&) {
          row.converged = false;
        }
        rows[rep * nm + k] = std::move(row);
      }
    }
  });
  out.reps = rows;

  for (std::size_t k = 0; k < nm; ++k) {
    const std::string mname = method_name(methods[k]);
    const bool has_gamma = methods[k] != Method::Cc;
    for (int par = 0; par < (has_gamma ? 2 : 1); ++par) {
      const bool is_mu = par == 0;
      MetricRow m;
      m.scenario = sc.name;
      m.method = mname;
      m.parameter = is_mu ? "mu" : "gamma";
      m.truth = is_mu ? out.truth_mu : out.truth_gamma;
      m.reps = reps;
      double sum = 0, sumsq = 0, sesum = 0, cov = 0;
      int ok = 0;
      for (int rep = 0; rep < reps; ++rep) {
        const RepRow& row = rows[static_cast<std::size_t>(rep) * nm + k];
        if (!row.converged) {
          ++m.n_fail;
          continue;
        }
        const double est = is_mu ? row.mu : row.gamma;
        const double se = is_mu ? row.mu_se : row.gamma_se;
        sum += est;
        sumsq += est * est;
        sesum += se;
        cov += std::abs(est - m.truth) <= kNormalQuantile975 * se ? 1.0 : 0.0;
        ++ok;
      }
      if (ok > 1) {
        const double mean = sum / ok;
        m.bias = mean - m.truth;
        m.mc_sd = std::sqrt((sumsq - ok * mean * mean) / (ok - 1));
        m.mean_se = sesum / ok;
        m.coverage = cov / ok;
      }
      m.usable = m.n_fail * 5 <= reps;
      out.rows.push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace sor
