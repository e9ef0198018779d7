#pragma once

#include <Eigen/Dense>

#include "sor/types.hpp"

namespace sor {

// Overflow-safe logistic function, branched at t = 0:
//   t >= 0: 1/(1+exp(-t));  t < 0: exp(t)/(1+exp(t)).
// Saturates to exactly 1.0 (resp. denormal-small positives) only where IEEE
// double cannot represent anything closer; never overflows on [-700, 700].
double expit(double t);

// Inverse of expit on (0,1); throws std::domain_error outside.
double logit(double p);

// log(1 + exp(t)) without overflow, branched at t = 0.
double softplus(double t);

struct PropensityValues {
  double pi1 = 0;  // first-call response probability
  double pi2 = 0;  // second-call response probability among first-call misses
  double p2 = 0;   // overall response: pi1 + pi2*(1 - pi1), exactly as written
};

// Evaluates both call propensities at (x, y) under the working models.
// Throws ConfigError if parameter dimensions disagree with the design maps.
PropensityValues propensities(const Eigen::VectorXd& x, double y,
                              const WorkingModelSpec& spec,
                              const ParameterState& params);

// The shared odds-ratio function gamma' g(x,y): by the stableness-of-
// resistance assumption it equals log OR of response vs y for both calls.
double odds_ratio(const Eigen::VectorXd& x, double y,
                  const WorkingModelSpec& spec, const Eigen::VectorXd& gamma);

}  // namespace sor
