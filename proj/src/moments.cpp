#include "sor/moments.hpp"

#include <cmath>
#include <utility>

#include "sor/errors.hpp"
#include "sor/propensity.hpp"
#include "sor/reduce.hpp"
#include "sor/tilting.hpp"

namespace sor {

Method method_from_name(const std::string& name) {
  if (name == "cc") return Method::Cc;
  if (name == "ipw") return Method::Ipw;
  if (name == "reg") return Method::Reg;
  if (name == "dr") return Method::Dr;
  if (name == "calibration") return Method::Calibration;
  throw ConfigError("unknown method '" + name +
                    "' (expected cc, ipw, reg, dr, calibration)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Cc: return "cc";
    case Method::Ipw: return "ipw";
    case Method::Reg: return "reg";
    case Method::Dr: return "dr";
    case Method::Calibration: return "calibration";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parameter packing

int ParameterLayout::dim() const {
  int d = d_gamma + d_target;
  if (has_beta) d += d_beta + 1;  // sigma rides with beta
  if (has_alpha1) d += d_alpha1;
  if (has_alpha2) d += d_alpha2;
  return d;
}

std::vector<std::string> ParameterLayout::names() const {
  std::vector<std::string> out;
  auto push_block = [&](const std::string& base, int count) {
    for (int k = 0; k < count; ++k)
      out.push_back(count == 1 && base != "alpha1" && base != "alpha2" &&
                            base != "beta"
                        ? base
                        : base + "[" + std::to_string(k) + "]");
  };
  if (has_beta) {
    push_block("beta", d_beta);
    out.push_back("sigma");
  }
  if (has_alpha1) push_block("alpha1", d_alpha1);
  if (has_alpha2) push_block("alpha2", d_alpha2);
  push_block("gamma", d_gamma);
  if (d_target == 1)
    out.push_back(target_label);
  else
    push_block(target_label, d_target);
  return out;
}

Eigen::VectorXd ParameterLayout::pack(const ParameterState& s) const {
  Eigen::VectorXd p(dim());
  int at = 0;
  if (has_beta) {
    p.segment(at, d_beta) = s.beta;
    at += d_beta;
    p[at++] = s.sigma;
  }
  if (has_alpha1) {
    p.segment(at, d_alpha1) = s.alpha1;
    at += d_alpha1;
  }
  if (has_alpha2) {
    if (mode == Mode::CommonSlope)
      p[at] = s.alpha2[0];
    else
      p.segment(at, d_alpha2) = s.alpha2;
    at += d_alpha2;
  }
  p.segment(at, d_gamma) = s.gamma;
  at += d_gamma;
  p.segment(at, d_target) = s.target;
  return p;
}

ParameterState ParameterLayout::unpack(const Eigen::VectorXd& p) const {
  ParameterState s;
  int at = 0;
  if (has_beta) {
    s.beta = p.segment(at, d_beta);
    at += d_beta;
    s.sigma = p[at++];
  }
  if (has_alpha1) {
    s.alpha1 = p.segment(at, d_alpha1);
    at += d_alpha1;
  }
  if (has_alpha2) {
    if (mode == Mode::CommonSlope) {
      // shared covariate slopes, call-specific intercepts
      s.alpha2 = s.alpha1;
      s.alpha2[0] = p[at];
    } else {
      s.alpha2 = p.segment(at, d_alpha2);
    }
    at += d_alpha2;
  }
  s.gamma = p.segment(at, d_gamma);
  at += d_gamma;
  s.target = p.segment(at, d_target);
  return s;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd MomentSystem::mean(const Eigen::VectorXd& p,
                                   const Eigen::VectorXd* weights) const {
  prepare(p);
  Eigen::VectorXd out;
  blocked_mean(
      n_, dim_, [&](std::size_t i, double* g) { eval(i, p, g); }, out, weights);
  return out;
}

void MomentSystem::mean_and_outer(const Eigen::VectorXd& p, Eigen::VectorXd& mean,
                                  Eigen::MatrixXd& outer,
                                  const Eigen::VectorXd* weights) const {
  prepare(p);
  blocked_mean_and_outer(
      n_, dim_, [&](std::size_t i, double* g) { eval(i, p, g); }, mean, outer,
      weights);
}

namespace {

// Per-record features, bound once at system construction so that parameter
// sweeps are pure arithmetic. Columns index records.
struct Bound {
  Eigen::MatrixXd X;            // raw covariates (for general tilt paths)
  Eigen::MatrixXd a1f, a2f, w2f, v1f, v2f;
  Eigen::MatrixXd gf;           // odds-ratio features at the observed outcome
  Eigen::MatrixXd uf;           // custom u instrument at the observed outcome
  Eigen::VectorXd y;            // 0 where missing; guarded by indicators
  std::vector<std::uint8_t> r1, r2;
  int d1 = 0, d2 = 0, db = 0, dg = 0, dv1 = 0, dv2 = 0, du = 0;
  bool custom_u = false;
  std::size_t n = 0;
};

Bound bind_features(const Dataset& data, const WorkingModelSpec& spec) {
  const int xd = data.xdim();
  spec.validate(xd);
  Bound b;
  b.n = data.n();
  b.d1 = spec.a1.out_dim(xd);
  b.d2 = spec.a2.out_dim(xd);
  b.db = spec.outcome.out_dim(xd);
  b.dg = spec.gamma_map.dim();
  b.dv1 = spec.v1 ? spec.v1->out_dim(xd) : b.d1;
  b.dv2 = spec.v2 ? spec.v2->out_dim(xd) : b.d2;
  b.custom_u = spec.u.has_value();
  b.du = b.custom_u ? spec.u->dim : b.dg;

  const auto n = static_cast<Eigen::Index>(b.n);
  b.X.resize(xd, n);
  b.a1f.resize(b.d1, n);
  b.a2f.resize(b.d2, n);
  b.w2f.resize(b.db, n);
  b.v1f.resize(b.dv1, n);
  b.v2f.resize(b.dv2, n);
  b.gf = Eigen::MatrixXd::Zero(b.dg, n);
  if (b.custom_u) b.uf = Eigen::MatrixXd::Zero(b.du, n);
  b.y = Eigen::VectorXd::Zero(n);
  b.r1.resize(b.n);
  b.r2.resize(b.n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const ObservationRecord& r = data.records[static_cast<std::size_t>(i)];
    b.X.col(i) = r.x;
    spec.a1.eval(r.x, b.a1f.col(i).data());
    spec.a2.eval(r.x, b.a2f.col(i).data());
    spec.outcome.eval(r.x, b.w2f.col(i).data());
    if (spec.v1)
      spec.v1->eval(r.x, b.v1f.col(i).data());
    else
      b.v1f.col(i) = b.a1f.col(i);
    if (spec.v2)
      spec.v2->eval(r.x, b.v2f.col(i).data());
    else
      b.v2f.col(i) = b.a2f.col(i);
    b.r1[static_cast<std::size_t>(i)] = r.r1 ? 1 : 0;
    b.r2[static_cast<std::size_t>(i)] = r.r2 ? 1 : 0;
    if (r.r2) {
      b.y[i] = *r.y;
      spec.gamma_map.eval(r.x, *r.y, b.gf.col(i).data());
      if (b.custom_u) spec.u->eval(r.x, *r.y, b.uf.col(i).data());
    }
  }
  return b;
}

// Sweep-level cache for the exponential-tilt quadrature. With the linear-in-y
// odds-ratio design the tilt factors exp(-gamma*sqrt(2)*sigma*t_i) do not
// depend on the record, so every tilted expectation the mean systems need
// reduces to a handful of per-sweep sums (fast path). General designs fall
// back to a per-record node loop.
struct TiltCache {
  bool fast = false;
  bool ok = false;
  int order = 64;
  double ct = 0;          // sqrt(2) * sigma
  Eigen::VectorXd e;      // exp(-gamma * ct * t_i)
  double S0 = 0, S1 = 0;  // sum w e, sum w e t
  double P0 = 0, P1 = 0;  // sum w e^2, sum w e^2 t
  double shift = 0;       // ct * S1 / S0: tilted mean = m + shift

  void prepare(const GaussHermiteRule& rule, double gamma, double sigma) {
    fast = true;
    ct = std::sqrt(2.0) * sigma;
    const Eigen::ArrayXd t = rule.nodes.array();
    e = (-gamma * ct * t).exp().matrix();
    const Eigen::ArrayXd we = rule.weights.array() * e.array();
    S0 = we.sum();
    S1 = (we * t).sum();
    P0 = (we * e.array()).sum();
    P1 = (we * e.array() * t).sum();
    shift = ct * S1 / S0;
    ok = std::isfinite(S0 + S1 + P0 + P1) && S0 > 1e-300 && sigma > 0;
  }
};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Common state for the bound mean/functional systems.
class SystemBase : public MomentSystem {
 public:
  SystemBase(const Dataset& data, WorkingModelSpec spec)
      : spec_(std::move(spec)), bf_(bind_features(data, spec_)) {
    n_ = bf_.n;
    rule_ = &gauss_hermite_rule(spec_.quadrature_order);
    fast_tilt_ = spec_.gamma_map.kind == GammaMapKind::LinearY;
  }

 protected:
  WorkingModelSpec spec_;
  Bound bf_;
  const GaussHermiteRule* rule_ = nullptr;
  bool fast_tilt_ = false;

  mutable ParameterState st_;
  mutable TiltCache tc_;

  void unpack_into_cache(const Eigen::VectorXd& p) const { st_ = layout_.unpack(p); }

  // General-path tilt weights at record i (node outcomes and stabilized
  // weights), written into the caller's buffers. Returns total weight.
  double record_tilt(std::size_t i, double m, Eigen::ArrayXd& ynodes,
                     Eigen::ArrayXd& om) const {
    const int nq = static_cast<int>(rule_->nodes.size());
    ynodes.resize(nq);
    om.resize(nq);
    Eigen::VectorXd g(bf_.dg), g0(bf_.dg);
    spec_.gamma_map.eval(bf_.X.col(static_cast<Eigen::Index>(i)), m, g0.data());
    const double shift = st_.gamma.dot(g0);
    const double ct = std::sqrt(2.0) * st_.sigma;
    for (int k = 0; k < nq; ++k) {
      ynodes[k] = m + ct * rule_->nodes[k];
      spec_.gamma_map.eval(bf_.X.col(static_cast<Eigen::Index>(i)), ynodes[k],
                           g.data());
      om[k] = rule_->weights[k] * std::exp(-(st_.gamma.dot(g) - shift));
    }
    return om.sum();
  }

  double gamma_dot_gf(std::size_t i) const {
    return st_.gamma.dot(bf_.gf.col(static_cast<Eigen::Index>(i)));
  }
};

// ---------------------------------------------------------------------------
// Inverse-probability weighting: propensity blocks for (alpha1, alpha2,
// gamma) plus the weighted mean. No tilting anywhere.
class IpwSystem final : public SystemBase {
 public:
  IpwSystem(const Dataset& data, WorkingModelSpec spec, const FunctionalSpec* fn)
      : SystemBase(data, std::move(spec)) {
    layout_.has_beta = false;
    layout_.d_alpha1 = bf_.d1;
    layout_.has_alpha2 = true;
    layout_.d_alpha2 = bf_.d2;
    layout_.d_gamma = bf_.dg;
    if (fn) {
      fn_ = *fn;
      layout_.d_target = fn_.theta_dim;
      layout_.target_label = fn_.label;
    }
    dim_ = bf_.dv1 + bf_.dv2 + bf_.du + layout_.d_target;
    if (dim_ != layout_.dim())
      throw ConfigError(
          "ipw system is not exactly identified: instrument dimensions "
          "(v1,v2,u) must match (alpha1,alpha2,gamma)");
  }

  void prepare(const Eigen::VectorXd& p) const override { unpack_into_cache(p); }

  void eval(std::size_t i, const Eigen::VectorXd&, double* out) const override {
    const auto c = static_cast<Eigen::Index>(i);
    const int dv1 = bf_.dv1, dv2 = bf_.dv2, du = bf_.du, dt = layout_.d_target;
    Eigen::Map<Eigen::VectorXd> g1(out, dv1), g2(out + dv1, dv2),
        g3(out + dv1 + dv2, du), g4(out + dv1 + dv2 + du, dt);
    const bool r1 = bf_.r1[i], r2 = bf_.r2[i];
    const auto u_col = [&]() { return bf_.custom_u ? bf_.uf.col(c) : bf_.gf.col(c); };

    if (!r2) {
      g1 = -bf_.v1f.col(c);
      g2 = -bf_.v2f.col(c);
      g3.setZero();
      target_block(i, kNaN, kNaN, g4.data());
      return;
    }
    const double s = gamma_dot_gf(i);
    const double pi1 = expit(st_.alpha1.dot(bf_.a1f.col(c)) + s);
    const double pi2 = expit(st_.alpha2.dot(bf_.a2f.col(c)) + s);
    if (r1) {
      g1 = (1.0 / pi1 - 1.0) * bf_.v1f.col(c);
      g2.setZero();
      g3 = (-(1.0 - pi1) / pi1) * u_col();
    } else {
      g1 = -bf_.v1f.col(c);
      g2 = (1.0 / pi2 - 1.0) * bf_.v2f.col(c);
      g3 = (1.0 / pi2) * u_col();
    }
    target_block(i, pi1, pi2, g4.data());
  }

 private:
  FunctionalSpec fn_;

  // mean target: r2 * y / p2 - mu; functional target: r2 * m(x,y,theta) / p2
  void target_block(std::size_t i, double pi1, double pi2, double* out) const {
    const auto c = static_cast<Eigen::Index>(i);
    const int dt = layout_.d_target;
    if (!bf_.r2[i]) {
      if (fn_.m) {
        for (int k = 0; k < dt; ++k) out[k] = 0;
      } else {
        out[0] = -st_.target[0];
      }
      return;
    }
    const double p2 = pi1 + pi2 * (1.0 - pi1);
    if (fn_.m) {
      fn_.m(bf_.X.col(c), bf_.y[c], st_.target, out);
      for (int k = 0; k < dt; ++k) out[k] /= p2;
    } else {
      out[0] = bf_.y[c] / p2 - st_.target[0];
    }
  }
};

// ---------------------------------------------------------------------------
// Outcome-model regression: callback-respondent Gaussian score, the
// (alpha1, gamma) block with its tilted completion, and the imputed mean.
class RegSystem final : public SystemBase {
 public:
  RegSystem(const Dataset& data, WorkingModelSpec spec, const FunctionalSpec* fn)
      : SystemBase(data, std::move(spec)) {
    layout_.has_beta = true;
    layout_.d_beta = bf_.db;
    layout_.d_alpha1 = bf_.d1;
    layout_.has_alpha2 = false;
    layout_.d_gamma = bf_.dg;
    if (fn) {
      fn_ = *fn;
      layout_.d_target = fn_.theta_dim;
      layout_.target_label = fn_.label;
    }
    du_ = bf_.custom_u ? bf_.du : bf_.d1 + bf_.dg;
    dim_ = bf_.db + 1 + du_ + layout_.d_target;
    if (dim_ != layout_.dim())
      throw ConfigError(
          "reg system is not exactly identified: u must match (alpha1,gamma)");
    if (bf_.custom_u && du_ != bf_.d1 + bf_.dg)
      throw ConfigError("reg system: custom u must have dim(alpha1)+dim(gamma)");
  }

  void prepare(const Eigen::VectorXd& p) const override {
    unpack_into_cache(p);
    if (fast_tilt_) tc_.prepare(*rule_, st_.gamma[0], st_.sigma);
  }

  void eval(std::size_t i, const Eigen::VectorXd&, double* out) const override {
    const auto c = static_cast<Eigen::Index>(i);
    const int db = bf_.db, d1 = bf_.d1, dg = bf_.dg, dt = layout_.d_target;
    Eigen::Map<Eigen::VectorXd> gb(out, db);
    double& gs = out[db];
    Eigen::Map<Eigen::VectorXd> gu(out + db + 1, du_), gt(out + db + 1 + du_, dt);
    const bool r1 = bf_.r1[i], r2 = bf_.r2[i];
    const double m = st_.beta.dot(bf_.w2f.col(c));

    if (r2 && !r1) {
      const double resid = bf_.y[c] - m;
      gb = bf_.w2f.col(c) * (resid / (st_.sigma * st_.sigma));
      gs = resid * resid - st_.sigma * st_.sigma;
    } else {
      gb.setZero();
      gs = 0;
    }

    if (r2) {
      const double s = gamma_dot_gf(i);
      const double coef =
          r1 ? 1.0 / expit(st_.alpha1.dot(bf_.a1f.col(c)) + s) - 1.0 : -1.0;
      if (bf_.custom_u) {
        gu = coef * bf_.uf.col(c);
      } else {
        gu.head(d1) = coef * bf_.a1f.col(c);
        gu.tail(dg) = coef * bf_.gf.col(c);
      }
      target_block_observed(i, gt.data());
    } else if (fast_tilt_ && !bf_.custom_u) {
      if (!tc_.ok) {
        gu.setConstant(kNaN);
        gt.setConstant(kNaN);
        return;
      }
      gu.head(d1) = -bf_.a1f.col(c);
      gu[d1] = -(m + tc_.shift);
      target_block_missing_fast(i, m, gt.data());
    } else {
      general_missing(i, m, gu, gt);
    }
  }

 private:
  FunctionalSpec fn_;
  int du_ = 0;

  void target_block_observed(std::size_t i, double* out) const {
    const auto c = static_cast<Eigen::Index>(i);
    if (fn_.m) {
      fn_.m(bf_.X.col(c), bf_.y[c], st_.target, out);
    } else {
      out[0] = bf_.y[c] - st_.target[0];
    }
  }

  void target_block_missing_fast(std::size_t i, double m, double* out) const {
    const auto c = static_cast<Eigen::Index>(i);
    const int dt = layout_.d_target;
    if (!fn_.m) {
      out[0] = (m + tc_.shift) - st_.target[0];
      return;
    }
    // E{ m(x,Y,theta) | x, nonrespondent }: shared tilt weights, node loop
    const int nq = static_cast<int>(rule_->nodes.size());
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dt), val(dt);
    for (int k = 0; k < nq; ++k) {
      const double yk = m + tc_.ct * rule_->nodes[k];
      fn_.m(bf_.X.col(c), yk, st_.target, val.data());
      acc.noalias() += (rule_->weights[k] * tc_.e[k]) * val;
    }
    Eigen::Map<Eigen::VectorXd>(out, dt) = acc / tc_.S0;
  }

  void general_missing(std::size_t i, double m, Eigen::Map<Eigen::VectorXd>& gu,
                       Eigen::Map<Eigen::VectorXd>& gt) const {
    const auto c = static_cast<Eigen::Index>(i);
    const int d1 = bf_.d1, dg = bf_.dg, dt = layout_.d_target;
    Eigen::ArrayXd yn, om;
    const double tot = record_tilt(i, m, yn, om);
    Eigen::VectorXd uacc = Eigen::VectorXd::Zero(du_), uval(du_);
    Eigen::VectorXd tacc = Eigen::VectorXd::Zero(dt), tval(dt);
    for (int k = 0; k < yn.size(); ++k) {
      if (bf_.custom_u) {
        spec_.u->eval(bf_.X.col(c), yn[k], uval.data());
        uacc.noalias() += om[k] * uval;
      } else {
        spec_.gamma_map.eval(bf_.X.col(c), yn[k], uval.tail(dg).data());
        uacc.tail(dg).noalias() += om[k] * uval.tail(dg);
      }
      if (fn_.m) {
        fn_.m(bf_.X.col(c), yn[k], st_.target, tval.data());
        tacc.noalias() += om[k] * tval;
      } else {
        tacc[0] += om[k] * yn[k];
      }
    }
    if (bf_.custom_u) {
      gu = -uacc / tot;
    } else {
      gu.head(d1) = -bf_.a1f.col(c);
      gu.tail(dg) = -uacc.tail(dg) / tot;
    }
    gt = tacc / tot;
    if (!fn_.m) gt[0] -= st_.target[0];
  }
};

// ---------------------------------------------------------------------------
// Doubly robust system: Gaussian score, both propensity blocks with the
// centered odds-ratio block, and the augmented weighting identity target.
class DrSystem final : public SystemBase {
 public:
  DrSystem(const Dataset& data, WorkingModelSpec spec, const FunctionalSpec* fn)
      : SystemBase(data, std::move(spec)) {
    layout_.has_beta = true;
    layout_.d_beta = bf_.db;
    layout_.d_alpha1 = bf_.d1;
    layout_.has_alpha2 = true;
    layout_.d_alpha2 = bf_.d2;
    layout_.d_gamma = bf_.dg;
    if (fn) {
      fn_ = *fn;
      layout_.d_target = fn_.theta_dim;
      layout_.target_label = fn_.label;
    }
    dim_ = bf_.db + 1 + bf_.dv1 + bf_.dv2 + bf_.du + layout_.d_target;
    if (dim_ != layout_.dim())
      throw ConfigError(
          "dr system is not exactly identified: instrument dimensions "
          "(v1,v2,u) must match (alpha1,alpha2,gamma)");
  }

  void prepare(const Eigen::VectorXd& p) const override {
    unpack_into_cache(p);
    if (fast_tilt_) tc_.prepare(*rule_, st_.gamma[0], st_.sigma);
  }

  void eval(std::size_t i, const Eigen::VectorXd&, double* out) const override {
    const auto c = static_cast<Eigen::Index>(i);
    const int db = bf_.db, dv1 = bf_.dv1, dv2 = bf_.dv2, du = bf_.du,
              dt = layout_.d_target;
    Eigen::Map<Eigen::VectorXd> gb(out, db);
    double& gs = out[db];
    Eigen::Map<Eigen::VectorXd> gv1(out + db + 1, dv1),
        gv2(out + db + 1 + dv1, dv2), gu(out + db + 1 + dv1 + dv2, du),
        gt(out + db + 1 + dv1 + dv2 + du, dt);
    const bool r1 = bf_.r1[i], r2 = bf_.r2[i];
    const double m = st_.beta.dot(bf_.w2f.col(c));

    if (r2 && !r1) {
      const double resid = bf_.y[c] - m;
      gb = bf_.w2f.col(c) * (resid / (st_.sigma * st_.sigma));
      gs = resid * resid - st_.sigma * st_.sigma;
    } else {
      gb.setZero();
      gs = 0;
    }

    const double la2 = st_.alpha2.dot(bf_.a2f.col(c));

    if (fast_tilt_ && !tc_.ok) {
      for (int k = 0; k < dim_ - db - 1; ++k) out[db + 1 + k] = kNaN;
      return;
    }

    double pi1 = 0, pi2 = 0, w = 0, cu = 0;
    if (r2) {
      const double s = gamma_dot_gf(i);
      pi1 = expit(st_.alpha1.dot(bf_.a1f.col(c)) + s);
      pi2 = expit(la2 + s);
      if (r1) {
        gv1 = (1.0 / pi1 - 1.0) * bf_.v1f.col(c);
        gv2.setZero();
        cu = -(1.0 - pi1) / pi1;
        w = 1.0 / pi1 - (1.0 - pi1) / (pi1 * pi2);
      } else {
        gv1 = -bf_.v1f.col(c);
        gv2 = (1.0 / pi2 - 1.0) * bf_.v2f.col(c);
        cu = 1.0 / pi2;
        w = 1.0 / (pi2 * pi2);
      }
    } else {
      gv1 = -bf_.v1f.col(c);
      gv2 = -bf_.v2f.col(c);
    }

    if (fast_tilt_ && !bf_.custom_u && !fn_.m) {
      // all tilted pieces collapse to per-sweep sums
      const double q = std::exp(-(la2 + st_.gamma[0] * m));
      const double den = tc_.S0 + q * tc_.P0;
      const double ratio =
          (m * tc_.S0 + tc_.ct * tc_.S1 + q * (m * tc_.P0 + tc_.ct * tc_.P1)) / den;
      const double tmean = m + tc_.shift;
      if (cu != 0.0)
        gu[0] = cu * (bf_.y[c] - tmean);
      else
        gu.setZero();
      gt[0] = (r2 ? w * bf_.y[c] - (w - 1.0) * ratio : ratio) - st_.target[0];
      return;
    }
    general_tail(i, m, la2, cu, w, gu, gt);
  }

 private:
  FunctionalSpec fn_;

  // General path: per-record node loop for E(u|x), the augmentation ratio,
  // and (for functionals) E(m/pi2|x)/E(1/pi2|x).
  void general_tail(std::size_t i, double m, double la2, double cu, double w,
                    Eigen::Map<Eigen::VectorXd>& gu,
                    Eigen::Map<Eigen::VectorXd>& gt) const {
    const auto c = static_cast<Eigen::Index>(i);
    const int du = bf_.du, dg = bf_.dg, dt = layout_.d_target;
    const bool r2 = bf_.r2[i];
    Eigen::ArrayXd yn, om;
    const double tot = record_tilt(i, m, yn, om);
    Eigen::VectorXd uacc = Eigen::VectorXd::Zero(du), uval(du);
    Eigen::VectorXd tnum = Eigen::VectorXd::Zero(dt), tval(dt);
    Eigen::VectorXd gval(dg);
    double den = 0;
    for (int k = 0; k < yn.size(); ++k) {
      spec_.gamma_map.eval(bf_.X.col(c), yn[k], gval.data());
      const double inv_pi2 = 1.0 + std::exp(-(la2 + st_.gamma.dot(gval)));
      den += om[k] * inv_pi2;
      if (cu != 0.0) {
        if (bf_.custom_u)
          spec_.u->eval(bf_.X.col(c), yn[k], uval.data());
        else
          uval = gval;
        uacc.noalias() += om[k] * uval;
      }
      if (fn_.m) {
        fn_.m(bf_.X.col(c), yn[k], st_.target, tval.data());
        tnum.noalias() += (om[k] * inv_pi2) * tval;
      } else {
        tnum[0] += om[k] * inv_pi2 * yn[k];
      }
    }
    if (cu != 0.0) {
      if (bf_.custom_u)
        gu = cu * (bf_.uf.col(c) - uacc / tot);
      else
        gu = cu * (bf_.gf.col(c) - uacc / tot);
    } else {
      gu.setZero();
    }
    const Eigen::VectorXd ratio = tnum / den;
    if (fn_.m) {
      if (r2) {
        fn_.m(bf_.X.col(c), bf_.y[c], st_.target, tval.data());
        gt = w * tval - (w - 1.0) * ratio;
      } else {
        gt = ratio;  // w = 0
      }
    } else {
      gt[0] = (r2 ? w * bf_.y[c] - (w - 1.0) * ratio[0] : ratio[0]) - st_.target[0];
    }
  }
};

// ---------------------------------------------------------------------------
// Calibration weighting with the common-slope propensity layout: intercepts
// differ by call, covariate slopes and the odds-ratio slope are shared, and
// the instruments are pinned to (1) and (x, y).
class CalibSystem final : public SystemBase {
 public:
  CalibSystem(const Dataset& data, WorkingModelSpec spec, const FunctionalSpec* fn)
      : SystemBase(data, std::move(spec)) {
    if (spec_.a1.kind != XMapKind::Linear || spec_.a2.kind != XMapKind::Linear ||
        spec_.gamma_map.kind != GammaMapKind::LinearY)
      throw ConfigError(
          "calibration requires linear a1/a2 designs and the linear-y "
          "odds-ratio design");
    if (spec_.v1 || spec_.v2 || spec_.u)
      throw ConfigError("calibration uses pinned instruments; none may be set");
    for (std::size_t i = 0; i < bf_.n; ++i)
      if (bf_.X(0, static_cast<Eigen::Index>(i)) != 1.0)
        throw ConfigError(
            "calibration layout requires a constant first covariate");
    dx_ = static_cast<int>(bf_.X.rows());
    layout_.mode = ParameterLayout::Mode::CommonSlope;
    layout_.has_beta = false;
    layout_.d_alpha1 = dx_;
    layout_.has_alpha2 = true;
    layout_.d_alpha2 = 1;
    layout_.d_gamma = 1;
    if (fn) {
      fn_ = *fn;
      layout_.d_target = fn_.theta_dim;
      layout_.target_label = fn_.label;
    }
    dim_ = 1 + (dx_ + 1) + layout_.d_target;
    if (dim_ != layout_.dim())
      throw ConfigError("calibration system is not exactly identified");
  }

  void prepare(const Eigen::VectorXd& p) const override { unpack_into_cache(p); }

  void eval(std::size_t i, const Eigen::VectorXd&, double* out) const override {
    const auto c = static_cast<Eigen::Index>(i);
    const int dt = layout_.d_target;
    double& g1 = out[0];
    Eigen::Map<Eigen::VectorXd> g2(out + 1, dx_ + 1), gt(out + 1 + dx_ + 1, dt);
    const bool r1 = bf_.r1[i], r2 = bf_.r2[i];

    if (!r2) {
      g1 = -1.0;
      g2.setZero();
      if (fn_.m)
        gt.setZero();
      else
        gt[0] = -st_.target[0];
      return;
    }
    const double y = bf_.y[c];
    const double la1 = st_.alpha1.dot(bf_.X.col(c));
    const double la2 = st_.alpha2[0] + (la1 - st_.alpha1[0]);
    const double pi1 = expit(la1 + st_.gamma[0] * y);
    const double pi2 = expit(la2 + st_.gamma[0] * y);
    double coef;
    if (r1) {
      g1 = 1.0 / pi1 - 1.0;
      coef = -(1.0 - pi1) / pi1;
    } else {
      g1 = -1.0;
      coef = 1.0 / pi2;
    }
    g2.head(dx_) = coef * bf_.X.col(c);
    g2[dx_] = coef * y;
    const double p2 = pi1 + pi2 * (1.0 - pi1);
    if (fn_.m) {
      fn_.m(bf_.X.col(c), y, st_.target, gt.data());
      gt /= p2;
    } else {
      gt[0] = y / p2 - st_.target[0];
    }
  }

 private:
  FunctionalSpec fn_;
  int dx_ = 0;
};

// Complete-case M-estimation for functionals on the respondent stratum.
class CcFunctionalSystem final : public SystemBase {
 public:
  CcFunctionalSystem(const Dataset& data, WorkingModelSpec spec,
                     const FunctionalSpec& fn)
      : SystemBase(data, std::move(spec)), fn_(fn) {
    layout_.has_alpha1 = false;
    layout_.has_alpha2 = false;
    layout_.has_beta = false;
    layout_.d_gamma = 0;
    layout_.d_target = fn_.theta_dim;
    layout_.target_label = fn_.label;
    dim_ = fn_.theta_dim;
  }

  void prepare(const Eigen::VectorXd& p) const override { unpack_into_cache(p); }

  void eval(std::size_t i, const Eigen::VectorXd&, double* out) const override {
    const auto c = static_cast<Eigen::Index>(i);
    if (bf_.r2[i]) {
      fn_.m(bf_.X.col(c), bf_.y[c], st_.target, out);
    } else {
      for (int k = 0; k < dim_; ++k) out[k] = 0;
    }
  }

 private:
  FunctionalSpec fn_;
};

std::unique_ptr<MomentSystem> build(Method method, const Dataset& data,
                                    const WorkingModelSpec& spec,
                                    const FunctionalSpec* fn) {
  switch (method) {
    case Method::Ipw:
      return std::make_unique<IpwSystem>(data, spec, fn);
    case Method::Reg:
      return std::make_unique<RegSystem>(data, spec, fn);
    case Method::Dr:
      return std::make_unique<DrSystem>(data, spec, fn);
    case Method::Calibration:
      return std::make_unique<CalibSystem>(data, spec, fn);
    case Method::Cc:
      if (fn) return std::make_unique<CcFunctionalSystem>(data, spec, *fn);
      throw ConfigError("complete-case mean needs no moment system");
  }
  throw ConfigError("unknown method");
}

}  // namespace

std::unique_ptr<MomentSystem> make_mean_system(Method method, const Dataset& data,
                                               const WorkingModelSpec& spec) {
  return build(method, data, spec, nullptr);
}

std::unique_ptr<MomentSystem> make_functional_system(Method method,
                                                     const Dataset& data,
                                                     const WorkingModelSpec& spec,
                                                     const FunctionalSpec& fn) {
  if (!fn.m || fn.theta_dim < 1)
    throw ConfigError("functional spec needs m and theta_dim >= 1");
  return build(method, data, spec, &fn);
}

// ---------------------------------------------------------------------------

Eigen::VectorXd logistic_fit(const Eigen::MatrixXd& feats_cols,
                             const std::vector<std::uint8_t>& target) {
  const int d = static_cast<int>(feats_cols.rows());
  const auto n = static_cast<Eigen::Index>(target.size());
  if (feats_cols.cols() != n) throw ConfigError("logistic_fit: size mismatch");
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = expit(b.dot(feats_cols.col(i)));
      grad.noalias() +=
          (static_cast<double>(target[static_cast<std::size_t>(i)]) - p) *
          feats_cols.col(i);
      hess.noalias() +=
          (p * (1 - p)) * (feats_cols.col(i) * feats_cols.col(i).transpose());
    }
    hess.diagonal().array() += 1e-10 * static_cast<double>(n);
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    b += step;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-10 * static_cast<double>(n)) break;
    if (!b.allFinite()) throw SolverError("logistic_fit: diverged");
  }
  return b;
}

std::pair<Eigen::VectorXd, double> least_squares_fit(
    const Eigen::MatrixXd& feats_cols, const Eigen::VectorXd& y) {
  const auto n = feats_cols.cols();
  const int d = static_cast<int>(feats_cols.rows());
  if (y.size() != n) throw ConfigError("least_squares_fit: size mismatch");
  if (n <= d)
    throw DataError("least_squares_fit: not enough records for the fit");
  Eigen::MatrixXd X = feats_cols.transpose();
  Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  const double ssr = (y - X * beta).squaredNorm();
  return {beta, std::sqrt(ssr / static_cast<double>(n))};
}

ParameterState starting_values(Method method, const Dataset& data,
                               const WorkingModelSpec& spec) {
  const int xd = data.xdim();
  spec.validate(xd);
  const auto n = static_cast<Eigen::Index>(data.n());
  const int d1 = spec.a1.out_dim(xd), d2 = spec.a2.out_dim(xd),
            db = spec.outcome.out_dim(xd), dg = spec.gamma_map.dim();

  Eigen::MatrixXd a1f(d1, n);
  std::vector<std::uint8_t> r1(data.n());
  Eigen::Index n_miss1 = 0, n_callback = 0, n_resp = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const ObservationRecord& r = data.records[static_cast<std::size_t>(i)];
    spec.a1.eval(r.x, a1f.col(i).data());
    r1[static_cast<std::size_t>(i)] = r.r1 ? 1 : 0;
    n_miss1 += !r.r1;
    n_callback += (!r.r1 && r.r2);
    n_resp += r.r2;
  }

  ParameterState s;
  s.alpha1 = logistic_fit(a1f, r1);

  Eigen::MatrixXd a2f(d2, n_miss1);
  std::vector<std::uint8_t> r2m(static_cast<std::size_t>(n_miss1));
  Eigen::MatrixXd w2f(db, n_callback);
  Eigen::VectorXd ycb(n_callback);
  Eigen::Index j = 0, k = 0;
  double ysum = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const ObservationRecord& r = data.records[static_cast<std::size_t>(i)];
    if (!r.r1) {
      spec.a2.eval(r.x, a2f.col(j).data());
      r2m[static_cast<std::size_t>(j)] = r.r2 ? 1 : 0;
      ++j;
      if (r.r2) {
        spec.outcome.eval(r.x, w2f.col(k).data());
        ycb[k] = *r.y;
        ++k;
      }
    }
    if (r.r2) ysum += *r.y;
  }
  s.alpha2 = logistic_fit(a2f, r2m);
  auto [beta, sigma] = least_squares_fit(w2f, ycb);
  s.beta = beta;
  s.sigma = sigma;
  s.gamma = Eigen::VectorXd::Zero(dg);
  s.target = Eigen::VectorXd::Constant(1, ysum / static_cast<double>(n_resp));

  if (method == Method::Calibration) {
    // shared slopes come from the first-call fit; only the intercept of the
    // second-call fit survives packing
    if (s.alpha2.size() != s.alpha1.size())
      throw ConfigError("calibration starting values need matching designs");
  }
  return s;
}

}  // namespace sor
