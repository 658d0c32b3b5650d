#pragma once

// Diagnostics for maximal L^1-in-time regularity of rho du/dt = L u + f and
// for the equivalence of the semigroup norms built from e^{t b L} and e^{t L}.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lamelab/besov.hpp"
#include "lamelab/io.hpp"
#include "lamelab/varcoef.hpp"

namespace lamelab {

struct MaxRegReport {
  double u0_norm = 0.0;     ///< ||u0||_{B^s_{p,1}}
  double f_norm = 0.0;      ///< ||f||_{L^1(B^s_{p,1})}
  SolutionNorms out;        ///< L^inf(B^s), L^1(B^s) of du/dt and of L u
  double ratio = 0.0;       ///< out.total() / (u0_norm + f_norm), 0 when both vanish
  double max_leakage = 0.0; ///< worst boundary-block share seen
  double s = 0.0;
  double p = 2.0;
  double T = 0.0;
  double dt = 0.0;
  int steps = 0;
  int N = 0;

  bool flagged() const { return max_leakage > 0.01; }
};

namespace detail {

inline double trapezoid(const std::vector<double>& v, double dt) {
  if (v.size() < 2) return 0.0;
  double acc = 0.5 * (v.front() + v.back());
  for (std::size_t i = 1; i + 1 < v.size(); ++i) acc += v[i];
  return acc * dt;
}

}  // namespace detail

/// Runs the theta scheme with uniform steps on [0, T] and integrates the Besov
/// norms of u, du/dt = b (L u + f) and L u over the scheme's own nodes.
inline MaxRegReport solve_linear_maxreg(const Coefficient& coef, const LameParams& params,
                                        const Field& u0, const Forcing& forcing, double s, double p,
                                        double T, const StepperConfig& cfg) {
  if (!(T > 0.0)) throw std::invalid_argument("horizon T must be positive");
  if (!(std::abs(s) < 2.0)) throw std::invalid_argument("maxreg needs |s| < 2");
  if (!(p >= 1.0)) throw std::invalid_argument("maxreg needs p >= 1");
  const Grid& g = coef.grid();
  const BesovIndex idx{s, p, 1.0};
  StepperConfig run_cfg = cfg;
  run_cfg.dt_relative = 0.0;
  LameEvolver ev(coef, params, run_cfg);

  const int steps = std::max(1, static_cast<int>(std::ceil(T / cfg.dt - 1e-9)));
  const double dt = T / steps;

  MaxRegReport rep;
  rep.s = s;
  rep.p = p;
  rep.T = T;
  rep.dt = dt;
  rep.steps = steps;
  rep.N = g.points();

  std::vector<double> f_vals, dt_vals, op_vals;
  f_vals.reserve(steps + 1);
  dt_vals.reserve(steps + 1);
  op_vals.reserve(steps + 1);
  Field f = Field::vector(g);
  auto record = [&](const Field& u, double t) {
    const BesovValue bu = besov_norm(u, idx);
    rep.out.sup_norm = std::max(rep.out.sup_norm, bu.value);
    Field Lu = ev.apply_operator(u);
    const BesovValue bl = besov_norm(Lu, idx);
    op_vals.push_back(bl.value);
    if (forcing) {
      forcing(t, f);
      const BesovValue bf = besov_norm(f, idx);
      f_vals.push_back(bf.value);
      Lu += f;
      rep.max_leakage = std::max(rep.max_leakage, bf.leakage);
    } else {
      f_vals.push_back(0.0);
    }
    const BesovValue bd = besov_norm(multiply(coef.b, Lu), idx);
    dt_vals.push_back(bd.value);
    rep.max_leakage = std::max({rep.max_leakage, bu.leakage, bl.leakage, bd.leakage});
  };

  Field u = u0;
  if (!u.is_vector() || !(u.grid() == g)) {
    throw std::invalid_argument("initial data must be a vector field on the coefficient grid");
  }
  require_finite(u, "initial data");
  rep.u0_norm = besov_norm(u0, idx).value;
  record(u, 0.0);
  for (int k = 0; k < steps; ++k) {
    u = ev.step(u, k * dt, dt, forcing);
    record(u, (k + 1) * dt);
  }
  rep.f_norm = detail::trapezoid(f_vals, dt);
  rep.out.dt_l1 = detail::trapezoid(dt_vals, dt);
  rep.out.op_l1 = detail::trapezoid(op_vals, dt);
  const double in = rep.u0_norm + rep.f_norm;
  rep.ratio = in > 0.0 ? rep.out.total() / in : 0.0;
  if (!std::isfinite(rep.ratio)) throw NumericalError("maxreg ratio is not finite");
  return rep;
}

/// E_p norms of a uniformly sampled trajectory at s = n/p - 1, r = 1; du/dt by
/// second-order differences (centered inside, one-sided at the ends).
inline SolutionNorms ep_norm(const Trajectory& tr, const LameParams& params, double p) {
  if (tr.states.size() < 3 || tr.times.size() != tr.states.size()) {
    throw std::invalid_argument("E_p norm needs at least 3 time samples");
  }
  const std::size_t m = tr.states.size();
  const double dt = (tr.times.back() - tr.times.front()) / double(m - 1);
  for (std::size_t i = 1; i < m; ++i) {
    if (std::abs(tr.times[i] - tr.times[i - 1] - dt) > 1e-9 * std::max(1.0, dt)) {
      throw std::invalid_argument("E_p norm needs uniform time samples");
    }
  }
  const Grid& g = tr.states.front().grid();
  const BesovIndex idx{g.dim() / p - 1.0, p, 1.0};
  SolutionNorms out;
  std::vector<double> dv(m), ov(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Field& u = tr.states[i];
    out.sup_norm = std::max(out.sup_norm, besov_norm(u, idx).value);
    ov[i] = besov_norm(lame_apply(u, params), idx).value;
    Field d;
    if (i == 0) {
      d = 4.0 * tr.states[1] - tr.states[2] - 3.0 * tr.states[0];
    } else if (i + 1 == m) {
      d = 3.0 * tr.states[m - 1] - 4.0 * tr.states[m - 2] + tr.states[m - 3];
    } else {
      d = tr.states[i + 1] - tr.states[i - 1];
    }
    d *= 1.0 / (2.0 * dt);
    dv[i] = besov_norm(d, idx).value;
  }
  out.dt_l1 = detail::trapezoid(dv, dt);
  out.op_l1 = detail::trapezoid(ov, dt);
  return out;
}

struct NormEquivConfig {
  double dt_relative = 0.02;  ///< stepper step as a fraction of the current time
  double tol = 1e-10;
  OperatorKind kind = OperatorKind::Spectral;
};

namespace detail {

/// || t^s a(t) ||_{L^q(dt/t)} from geometric samples, with the small-t part
/// below t_lo taken as a(t) = a0.
inline double weighted_lq(const std::vector<double>& t, const std::vector<double>& a, double a0,
                          double s, double q) {
  const double dlog = 0.5 * std::log(2.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double w = (i == 0 || i + 1 == t.size()) ? 0.5 : 1.0;
    acc += w * std::pow(std::pow(t[i], s) * a[i], q);
  }
  acc *= dlog;
  acc += std::pow(a0, q) * std::pow(t.front(), s * q) / (s * q);
  return std::pow(acc, 1.0 / q);
}

}  // namespace detail

/// R = || t^s ||e^{t b L} x||_2 ||_{L^q(dt/t)} / || t^s ||e^{t L}(rho x)||_2 ||_{L^q(dt/t)}.
/// x must be rho-mean-free so that both flows decay.
inline double norm_equiv_ratio(const Coefficient& coef, const LameParams& params, const Field& x,
                               double s, double q, const NormEquivConfig& cfg = {}) {
  if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("norm equivalence needs s in (0, 1)");
  if (!(q >= 1.0)) throw std::invalid_argument("norm equivalence needs q >= 1");
  const Grid& g = coef.grid();
  if (!x.is_vector() || !(x.grid() == g)) throw std::invalid_argument("x must be a vector field on the grid");
  const Field rx = multiply(coef.rho, x);
  const auto mass = integral(rx);
  double scale = 0.0;
  for (double v : integral(multiply(coef.rho, Field::vector(g, 1.0)))) scale = std::max(scale, v);
  for (double v : mass) {
    if (std::abs(v) > 1e-10 * scale * std::max(1.0, max_abs(x))) {
      throw std::invalid_argument("x must have zero rho-weighted mean");
    }
  }
  const auto w = WaveTable::get(g);
  double rho_min = coef.rho.at(0, 0), rho_max = rho_min;
  for (double v : coef.rho.component(0)) {
    rho_min = std::min(rho_min, v);
    rho_max = std::max(rho_max, v);
  }
  const double rate_max = std::max(params.mu, params.nu()) / rho_min;
  const double rate_min = std::min(params.mu, params.nu()) / std::max(rho_max, 1.0);
  const double t_lo = g.spacing() * g.spacing() / (16.0 * rate_max);
  const double t_hi = 40.0 / (rate_min * w->min_xi() * w->min_xi());
  const std::vector<double> t = geometric_nodes(t_lo, t_hi);

  std::vector<double> grid_t{0.0};
  grid_t.insert(grid_t.end(), t.begin(), t.end());
  StepperConfig sc;
  sc.dt = t_hi;
  sc.dt_relative = cfg.dt_relative;
  sc.tol = cfg.tol;
  sc.kind = cfg.kind;
  const Trajectory tr = LameEvolver(coef, params, sc).run(x, grid_t);

  std::vector<double> num(t.size()), den(t.size());
  Spectrum rs = forward(rx);
  for (std::size_t i = 0; i < t.size(); ++i) {
    num[i] = lp_norm(tr.states[i + 1], 2.0);
    den[i] = lp_norm(inverse(const_semigroup(rs, t[i], params)), 2.0);
  }
  const double d = detail::weighted_lq(t, den, lp_norm(rx, 2.0), s, q);
  if (!(d > 0.0)) throw std::invalid_argument("norm equivalence denominator vanishes");
  return detail::weighted_lq(t, num, lp_norm(x, 2.0), s, q) / d;
}

/// Subtracts the rho-weighted mean from every component of x.
inline Field rho_recenter(const Coefficient& coef, const Field& x) {
  const auto m = integral(multiply(coef.rho, x));
  const double mass = integral(coef.rho)[0];
  Field out = x;
  for (int c = 0; c < out.components(); ++c) {
    const double shift = m[c] / mass;
    for (double& v : out.component(c)) v -= shift;
  }
  return out;
}

/// One CSV row per report plus an aggregate row holding the maximum ratio.
inline CsvTable maxreg_table(const std::vector<MaxRegReport>& reports) {
  CsvTable t({"probe", "N", "dt", "steps", "T", "s", "p", "u0_norm", "f_norm", "sup_norm", "dt_l1",
              "op_l1", "ratio", "max_leakage"});
  double worst = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    worst = std::max(worst, r.ratio);
    t.add({std::to_string(i), std::to_string(r.N), format_number(r.dt), std::to_string(r.steps),
           format_number(r.T), format_number(r.s), format_number(r.p), format_number(r.u0_norm),
           format_number(r.f_norm), format_number(r.out.sup_norm), format_number(r.out.dt_l1),
           format_number(r.out.op_l1), format_number(r.ratio), format_number(r.max_leakage)});
  }
  t.add({"max", "", "", "", "", "", "", "", "", "", "", "", format_number(worst), ""});
  return t;
}

}  // namespace lamelab
