#include "sor/types.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sor/errors.hpp"
#include "sor/rng.hpp"

namespace sor {

std::vector<ValidationIssue> validate_dataset(const Dataset& data) {
  std::vector<ValidationIssue> issues;
  if (data.records.empty()) {
    issues.push_back({std::nullopt, "dataset is empty"});
    return issues;
  }
  const int d = static_cast<int>(data.records.front().x.size());
  bool any_r1 = false, any_callback = false, any_nonresp = false;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const ObservationRecord& r = data.records[i];
    if (r.r1 && !r.r2)
      issues.push_back({i, "r2 < r1 (callback monotonicity violated)"});
    if (r.r2 && !r.y.has_value())
      issues.push_back({i, "outcome missing although r2 = 1"});
    if (!r.r2 && r.y.has_value())
      issues.push_back({i, "outcome present although r2 = 0"});
    if (static_cast<int>(r.x.size()) != d)
      issues.push_back({i, "covariate dimension differs from first record"});
    if (!r.x.allFinite())
      issues.push_back({i, "non-finite covariate value"});
    if (r.y.has_value() && !std::isfinite(*r.y))
      issues.push_back({i, "non-finite outcome value"});
    any_r1 |= r.r1;
    any_callback |= (!r.r1 && r.r2);
    any_nonresp |= !r.r2;
  }
  if (!any_r1)
    issues.push_back({std::nullopt, "no first-call respondents (r1 = 1 stratum empty)"});
  if (!any_callback)
    issues.push_back({std::nullopt, "no callback respondents (r1 = 0, r2 = 1 stratum empty)"});
  if (!any_nonresp)
    issues.push_back({std::nullopt, "no final nonrespondents (r2 = 0 stratum empty)"});
  return issues;
}

// ---------------------------------------------------------------------------

int XMap::out_dim(int xdim) const {
  switch (kind) {
    case XMapKind::Linear: return xdim;
    case XMapKind::Squares: return xdim;
    case XMapKind::LinearSquares: return 2 * xdim - 1;
    case XMapKind::InterceptOnly: return 1;
    case XMapKind::Custom: return custom_dim;
  }
  return 0;
}

void XMap::eval(const Eigen::VectorXd& x, double* out) const {
  const int d = static_cast<int>(x.size());
  switch (kind) {
    case XMapKind::Linear:
      for (int k = 0; k < d; ++k) out[k] = x[k];
      return;
    case XMapKind::Squares:
      out[0] = x[0];
      for (int k = 1; k < d; ++k) out[k] = x[k] * x[k];
      return;
    case XMapKind::LinearSquares:
      for (int k = 0; k < d; ++k) out[k] = x[k];
      for (int k = 1; k < d; ++k) out[d + k - 1] = x[k] * x[k];
      return;
    case XMapKind::InterceptOnly:
      out[0] = 1.0;
      return;
    case XMapKind::Custom:
      custom(x, out);
      return;
  }
}

Eigen::VectorXd XMap::operator()(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(out_dim(static_cast<int>(x.size())));
  eval(x, out.data());
  return out;
}

XMap x_map(const std::string& name) {
  if (name == "linear") return XMap{XMapKind::Linear, "linear", 0, nullptr};
  if (name == "squares") return XMap{XMapKind::Squares, "squares", 0, nullptr};
  if (name == "linear+squares")
    return XMap{XMapKind::LinearSquares, "linear+squares", 0, nullptr};
  if (name == "intercept-only")
    return XMap{XMapKind::InterceptOnly, "intercept-only", 0, nullptr};
  throw ConfigError("unknown feature map '" + name +
                    "' (expected linear, squares, linear+squares, intercept-only)");
}

void GammaMap::eval(const Eigen::VectorXd& x, double y, double* out) const {
  if (kind == GammaMapKind::LinearY) {
    out[0] = y;
    return;
  }
  custom(x, y, out);
}

Eigen::VectorXd GammaMap::operator()(const Eigen::VectorXd& x, double y) const {
  Eigen::VectorXd out(dim());
  eval(x, y, out.data());
  return out;
}

// ---------------------------------------------------------------------------

std::string WorkingModelSpec::description() const {
  std::ostringstream os;
  os << "a1=" << a1.name << ";a2=" << a2.name << ";outcome=" << outcome.name
     << ";gamma=" << gamma_map.name << ";v1=" << (v1 ? v1->name : "default")
     << ";v2=" << (v2 ? v2->name : "default")
     << ";u=" << (u ? u->name : "default") << ";gh=" << quadrature_order;
  return os.str();
}

void WorkingModelSpec::validate(int xdim) const {
  if (xdim < 1) throw ConfigError("covariate dimension must be at least 1");
  auto check_xmap = [&](const XMap& m, const char* label) {
    if (m.kind == XMapKind::Custom && (!m.custom || m.custom_dim < 1))
      throw ConfigError(std::string(label) + ": custom map needs eval and dim");
    if (m.out_dim(xdim) < 1)
      throw ConfigError(std::string(label) + ": empty feature vector");
  };
  check_xmap(a1, "a1");
  check_xmap(a2, "a2");
  check_xmap(outcome, "outcome");
  if (v1) check_xmap(*v1, "v1");
  if (v2) check_xmap(*v2, "v2");
  if (u && (!u->eval || u->dim < 1))
    throw ConfigError("u: custom instrument needs eval and dim");
  if (gamma_map.kind == GammaMapKind::Custom &&
      (!gamma_map.custom || gamma_map.custom_dim < 1))
    throw ConfigError("gamma: custom map needs eval and dim");

  // g(x, 0) = 0 must hold exactly: evaluated at 100 seeded covariate draws.
  SplitMix64 rng(0x5eedf00dULL);
  Eigen::VectorXd x(xdim), g(gamma_map.dim());
  for (int trial = 0; trial < 100; ++trial) {
    x[0] = 1.0;
    for (int k = 1; k < xdim; ++k) x[k] = rng.uniform_pm1();
    gamma_map.eval(x, 0.0, g.data());
    if ((g.array() != 0.0).any())
      throw ConfigError("odds-ratio design must vanish at y = 0");
  }
}

std::string spec_fingerprint(const WorkingModelSpec& spec) {
  const std::string text = spec.description();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sor
