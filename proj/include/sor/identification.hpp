#pragma once

#include <Eigen/Dense>
#include <vector>

namespace sor {

// Finite-support joint law of (X, Y, R1, R2) under callback monotonicity and
// a shared odds-ratio function. Rows index x-support points, columns index
// y-support points.
struct DiscreteJoint {
  std::vector<Eigen::VectorXd> x_points;
  Eigen::VectorXd x_mass;        // P(X = x_i), sums to 1
  Eigen::VectorXd y_values;
  Eigen::MatrixXd f_y_given_x;   // rows sum to 1
  Eigen::MatrixXd pi1, pi2;      // response probabilities at (x_i, y_j)

  void validate() const;  // throws ConfigError on malformed tables
};

// Everything the observed data law reveals per covariate point:
//   f_y_r1(i,j)      = f(y_j, R1=1 | x_i)
//   f_y_r2_r1c(i,j)  = f(y_j, R2=1, R1=0 | x_i)
//   f_nonresp(i)     = f(R2=0 | x_i)
struct ObservedTables {
  std::vector<Eigen::VectorXd> x_points;
  Eigen::VectorXd x_mass;
  Eigen::VectorXd y_values;
  Eigen::MatrixXd f_y_r1, f_y_r2_r1c;
  Eigen::VectorXd f_nonresp;

  void validate() const;
};

ObservedTables observed_tables(const DiscreteJoint& joint);

// The identifying map evaluated at a trial baseline shift d for x_i:
//   L(d) = sum_y [ exp(d) f(y,R1=1|x)/f(y,R2=1,R1=0|x) - 1 ]^{-1}
//                f(y | R2=1, R1=0, x),
// strictly decreasing in d on the feasible half-line. Its root matches the
// observed nonresponse odds f(R2=0|R1=0,x)/f(R2=1|R1=0,x).
double l_of_d(const ObservedTables& obs, int xi, double d);

struct SolveDResult {
  double d = 0;               // root
  double lower_bracket = 0;   // feasibility boundary + offset
  double upper_bracket = 0;
  int iterations = 0;
  bool monotone_audit = true; // L strictly decreasing on a 50-point grid
};

// Bisection for the baseline shift at x_i: bracket below by the feasibility
// boundary max_y log{f(y,R2=1,R1=0|x)/f(y,R1=1|x)} + 1e-9, grow the upper
// bracket geometrically, then bisect to width 1e-12. Throws SolverError when
// the tables are incompatible with the model (no feasible d exists).
SolveDResult solve_d(const ObservedTables& obs, int xi);

struct RestrictionCheck {
  bool ok = false;
  double min_margin = 0;  // min over positive-mass cells of
                          // exp(d) f(y,R1=1|x) - f(y,R2=1,R1=0|x)
};

// Feasibility of a common baseline shift d across all support points.
RestrictionCheck check_restriction(const ObservedTables& obs, double d);

struct RecoveredModel {
  Eigen::VectorXd d;             // baseline shift per x point
  Eigen::MatrixXd pi1, pi2;      // reconstructed propensities
  Eigen::MatrixXd f_y_given_x;   // reconstructed outcome law (renormalized)
  std::vector<SolveDResult> details;
};

// Full inversion: per x, solve for d, then
//   odds pi2 = exp(d) rho(y) - 1,  odds pi1 = rho(y) - exp(-d),
//   f(y|x) = f(y,R1=1|x) / pi1(x,y), renormalized,
// where rho(y) = f(y,R1=1|x)/f(y,R2=1,R1=0|x). Throws SolverError if any
// reconstructed probability falls outside (0,1).
RecoveredModel recover_model(const ObservedTables& obs);

}  // namespace sor
