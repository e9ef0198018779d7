#include "sor/identification.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "sor/errors.hpp"

namespace sor {
namespace {

constexpr double kBracketOffset = 1e-9;
constexpr double kBisectWidth = 1e-12;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

// Nonresponse odds among first-call misses, the target of the identifying
// map: f(R2=0 | R1=0, x) / f(R2=1 | R1=0, x).
double target_odds(const ObservedTables& obs, int xi) {
  const double mass_callback = obs.f_y_r2_r1c.row(xi).sum();
  if (!(mass_callback > 0))
    throw SolverError("identification: callback-respondent stratum has no mass");
  return obs.f_nonresp[xi] / mass_callback;
}

// Feasibility boundary: d must exceed log of every f(y,R2=1,R1=0|x) /
// f(y,R1=1|x) over positive-mass cells. A zero first-call density against
// positive callback density pushes the boundary to +infinity: the tables are
// then incompatible with the model (the testable implication fails).
double lower_boundary(const ObservedTables& obs, int xi) {
  double lb = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < obs.y_values.size(); ++j) {
    const double f2s = obs.f_y_r2_r1c(xi, j);
    if (!(f2s > 0)) continue;
    const double f1 = obs.f_y_r1(xi, j);
    if (!(f1 > 0))
      throw SolverError(
          "identification: observed tables incompatible with the model "
          "(first-call density vanishes where callback density is positive)");
    lb = std::max(lb, std::log(f2s / f1));
  }
  if (!std::isfinite(lb))
    throw SolverError("identification: no positive-mass callback cells");
  return lb;
}

}  // namespace

void DiscreteJoint::validate() const {
  const int nx = static_cast<int>(x_points.size());
  const int ny = static_cast<int>(y_values.size());
  require(nx >= 1 && ny >= 2, "joint: need >=1 x point and >=2 y values");
  require(x_mass.size() == nx, "joint: x_mass size mismatch");
  require(std::abs(x_mass.sum() - 1.0) < 1e-10, "joint: x masses must sum to 1");
  require((x_mass.array() > 0).all(), "joint: x masses must be positive");
  auto check_table = [&](const Eigen::MatrixXd& t, const char* label) {
    require(t.rows() == nx && t.cols() == ny,
            std::string("joint: ") + label + " shape mismatch");
  };
  check_table(f_y_given_x, "f_y_given_x");
  check_table(pi1, "pi1");
  check_table(pi2, "pi2");
  for (int i = 0; i < nx; ++i) {
    require(std::abs(f_y_given_x.row(i).sum() - 1.0) < 1e-10,
            "joint: f(y|x) rows must sum to 1");
    for (int j = 0; j < ny; ++j) {
      require(f_y_given_x(i, j) >= 0, "joint: negative outcome mass");
      require(pi1(i, j) > 0 && pi1(i, j) < 1 && pi2(i, j) > 0 && pi2(i, j) < 1,
              "joint: propensities must lie strictly inside (0,1)");
    }
  }
}

void ObservedTables::validate() const {
  const int nx = static_cast<int>(x_points.size());
  const int ny = static_cast<int>(y_values.size());
  require(nx >= 1 && ny >= 2, "observed: need >=1 x point and >=2 y values");
  require(x_mass.size() == nx && f_nonresp.size() == nx,
          "observed: per-x table size mismatch");
  require(f_y_r1.rows() == nx && f_y_r1.cols() == ny &&
              f_y_r2_r1c.rows() == nx && f_y_r2_r1c.cols() == ny,
          "observed: table shape mismatch");
  for (int i = 0; i < nx; ++i) {
    require(f_nonresp[i] >= 0, "observed: negative nonresponse mass");
    double total = f_nonresp[i];
    for (int j = 0; j < ny; ++j) {
      require(f_y_r1(i, j) >= 0 && f_y_r2_r1c(i, j) >= 0,
              "observed: negative cell mass");
      total += f_y_r1(i, j) + f_y_r2_r1c(i, j);
    }
    require(std::abs(total - 1.0) < 1e-8,
            "observed: per-x masses must sum to 1");
  }
}

ObservedTables observed_tables(const DiscreteJoint& joint) {
  joint.validate();
  const int nx = static_cast<int>(joint.x_points.size());
  const int ny = static_cast<int>(joint.y_values.size());
  ObservedTables obs;
  obs.x_points = joint.x_points;
  obs.x_mass = joint.x_mass;
  obs.y_values = joint.y_values;
  obs.f_y_r1.resize(nx, ny);
  obs.f_y_r2_r1c.resize(nx, ny);
  obs.f_nonresp = Eigen::VectorXd::Zero(nx);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const double fy = joint.f_y_given_x(i, j);
      const double p1 = joint.pi1(i, j), p2 = joint.pi2(i, j);
      obs.f_y_r1(i, j) = fy * p1;
      obs.f_y_r2_r1c(i, j) = fy * (1 - p1) * p2;
      obs.f_nonresp[i] += fy * (1 - p1) * (1 - p2);
    }
  return obs;
}

double l_of_d(const ObservedTables& obs, int xi, double d) {
  const double mass_callback = obs.f_y_r2_r1c.row(xi).sum();
  const double ed = std::exp(d);
  double acc = 0;
  for (int j = 0; j < obs.y_values.size(); ++j) {
    const double f2s = obs.f_y_r2_r1c(xi, j);
    if (!(f2s > 0)) continue;
    const double rho = obs.f_y_r1(xi, j) / f2s;  // density ratio at y_j
    acc += (f2s / mass_callback) / (ed * rho - 1.0);
  }
  return acc;
}

SolveDResult solve_d(const ObservedTables& obs, int xi) {
  const double target = target_odds(obs, xi);
  SolveDResult res;
  res.lower_bracket = lower_boundary(obs, xi) + kBracketOffset;

  // Grow the upper bracket geometrically until L drops below the target.
  double lo = res.lower_bracket;
  double width = 1.0;
  double hi = lo + width;
  int grow = 0;
  while (l_of_d(obs, xi, hi) > target) {
    width *= 2.0;
    hi = lo + width;
    if (++grow > 200)
      throw SolverError("solve_d: upper bracket search failed");
  }
  res.upper_bracket = hi;

  // L is strictly decreasing: plain bisection to the pinned width.
  while (hi - lo > kBisectWidth) {
    const double mid = 0.5 * (lo + hi);
    if (l_of_d(obs, xi, mid) > target)
      lo = mid;
    else
      hi = mid;
    ++res.iterations;
    if (res.iterations > 200) break;
  }
  res.d = 0.5 * (lo + hi);

  // Monotonicity audit on a 50-point grid spanning the bracket.
  res.monotone_audit = true;
  const double a = res.lower_bracket, b = res.upper_bracket;
  double prev = l_of_d(obs, xi, a);
  for (int k = 1; k < 50; ++k) {
    const double cur = l_of_d(obs, xi, a + (b - a) * k / 49.0);
    if (!(cur < prev)) res.monotone_audit = false;
    prev = cur;
  }
  return res;
}

RestrictionCheck check_restriction(const ObservedTables& obs, double d) {
  RestrictionCheck out;
  out.min_margin = std::numeric_limits<double>::infinity();
  const double ed = std::exp(d);
  for (int i = 0; i < static_cast<int>(obs.x_points.size()); ++i)
    for (int j = 0; j < obs.y_values.size(); ++j) {
      if (!(obs.f_y_r2_r1c(i, j) > 0)) continue;
      out.min_margin = std::min(out.min_margin,
                                ed * obs.f_y_r1(i, j) - obs.f_y_r2_r1c(i, j));
    }
  out.ok = out.min_margin > 0;
  return out;
}

RecoveredModel recover_model(const ObservedTables& obs) {
  obs.validate();
  const int nx = static_cast<int>(obs.x_points.size());
  const int ny = static_cast<int>(obs.y_values.size());
  RecoveredModel rec;
  rec.d.resize(nx);
  rec.pi1 = Eigen::MatrixXd::Zero(nx, ny);
  rec.pi2 = Eigen::MatrixXd::Zero(nx, ny);
  rec.f_y_given_x = Eigen::MatrixXd::Zero(nx, ny);
  rec.details.reserve(nx);

  for (int i = 0; i < nx; ++i) {
    SolveDResult sd = solve_d(obs, i);
    rec.details.push_back(sd);
    rec.d[i] = sd.d;
    const double ed = std::exp(sd.d);
    double row_total = 0;
    for (int j = 0; j < ny; ++j) {
      const double f2s = obs.f_y_r2_r1c(i, j);
      if (!(f2s > 0)) continue;  // no observed mass: nothing to reconstruct
      const double rho = obs.f_y_r1(i, j) / f2s;
      const double odds2 = ed * rho - 1.0;
      const double odds1 = rho - 1.0 / ed;
      if (!(odds2 > 0) || !(odds1 > 0))
        throw SolverError("recover_model: reconstructed odds non-positive");
      rec.pi2(i, j) = odds2 / (1.0 + odds2);
      rec.pi1(i, j) = odds1 / (1.0 + odds1);
      if (!(rec.pi1(i, j) > 0 && rec.pi1(i, j) < 1 && rec.pi2(i, j) > 0 &&
            rec.pi2(i, j) < 1))
        throw SolverError("recover_model: probability outside (0,1)");
      rec.f_y_given_x(i, j) = obs.f_y_r1(i, j) / rec.pi1(i, j);
      row_total += rec.f_y_given_x(i, j);
    }
    if (!(row_total > 0))
      throw SolverError("recover_model: empty outcome law");
    rec.f_y_given_x.row(i) /= row_total;
  }
  return rec;
}

}  // namespace sor
