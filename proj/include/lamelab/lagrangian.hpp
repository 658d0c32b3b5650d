#pragma once

// Lagrangian formulation of the pressureless system: flow-map algebra, the
// nonlinearity f(u), the Picard fixed point for rho0 du/dt - L u = f(u), and
// the push-forward to Eulerian coordinates.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lamelab/besov.hpp"
#include "lamelab/error.hpp"
#include "lamelab/field_ops.hpp"
#include "lamelab/interpolation.hpp"
#include "lamelab/maxreg.hpp"
#include "lamelab/varcoef.hpp"

namespace lamelab {

/// Uniform grid on [0, T] with the largest step not above dt.
inline std::vector<double> uniform_times(double T, double dt) {
  if (!(T > 0.0) || !(dt > 0.0)) throw std::invalid_argument("T and dt must be positive");
  const int steps = std::max(1, static_cast<int>(std::ceil(T / dt - 1e-9)));
  std::vector<double> t(steps + 1);
  for (int i = 0; i <= steps; ++i) t[i] = T * i / steps;
  return t;
}

struct LagrangianState {
  std::vector<double> times;
  std::vector<Field> u;
  Coefficient rho0;
  LameParams params;
  StepperConfig stepper;  ///< scheme that produced u (used by the residual)

  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
  double horizon() const { return times.empty() ? 0.0 : times.back(); }
  const Grid& grid() const { return rho0.grid(); }

  void validate() const {
    if (times.size() < 2 || times.size() != u.size()) {
      throw std::invalid_argument("Lagrangian state needs matching times and samples");
    }
    if (times.front() != 0.0) throw std::invalid_argument("Lagrangian time grid must start at 0");
    const double h = dt();
    if (!(h > 0.0)) throw std::invalid_argument("Lagrangian time grid must increase");
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (std::abs(times[i] - times[i - 1] - h) > 1e-9 * std::max(1.0, h)) {
        throw std::invalid_argument("Lagrangian time grid must be uniform");
      }
    }
    for (const Field& f : u) {
      if (!f.is_vector() || !(f.grid() == grid())) {
        throw std::invalid_argument("velocity samples must be vector fields on the density grid");
      }
    }
  }

  Trajectory trajectory() const {
    Trajectory tr;
    tr.times = times;
    tr.states = u;
    return tr;
  }
};

/// Flow-map quantities at one time: X - id, DX, A = DX^{-1}, adj DX, det DX.
struct FlowFrame {
  double t = 0.0;
  Field displacement;
  Field DX;
  Field A;
  Field adj;
  Field J;
};

struct FlowMapData {
  std::vector<FlowFrame> frames;
  double J_min = 1.0;
  double J_max = 1.0;

  std::vector<double> times() const {
    std::vector<double> t;
    for (const auto& f : frames) t.push_back(f.t);
    return t;
  }

  /// max over nodes and times of |adj - J A| / max(|adj|, 1).
  double adjugate_defect() const;
  /// max over times of |int J - volume| / volume.
  double volume_defect() const;
};

namespace detail {

using Mat = Eigen::Matrix3d;

inline Mat load_matrix(const Field& M, std::size_t k, int n) {
  Mat a = Mat::Identity();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = M.at(i * n + j, k);
  return a;
}

inline void store_matrix(Field& M, std::size_t k, int n, const Mat& a) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M.at(i * n + j, k) = a(i, j);
}

/// Closed-form cofactor transpose and determinant for n = 2, 3.
inline double adjugate(const Mat& a, int n, Mat& adj) {
  adj = Mat::Identity();
  if (n == 2) {
    adj(0, 0) = a(1, 1);
    adj(0, 1) = -a(0, 1);
    adj(1, 0) = -a(1, 0);
    adj(1, 1) = a(0, 0);
    return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      adj(i, j) = a(r0, c0) * a(r1, c1) - a(r0, c1) * a(r1, c0);
    }
  }
  return a(0, 0) * adj(0, 0) + a(0, 1) * adj(1, 0) + a(0, 2) * adj(2, 0);
}

inline Mat inverse_matrix(const Mat& a, int n) {
  if (n == 2) {
    Mat out = Mat::Identity();
    out.topLeftCorner<2, 2>() = a.topLeftCorner<2, 2>().inverse();
    return out;
  }
  return a.inverse();
}

/// Row-wise divergence of W M^T for a Jacobian field W and matrix field M.
inline Field div_of_product(const Field& W, const Field& M) {
  const Grid& g = W.grid();
  const int n = g.dim();
  Field P = Field::matrix(g);
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const Mat w = load_matrix(W, k, n);
    const Mat m = load_matrix(M, k, n);
    store_matrix(P, k, n, (w * m.transpose()).eval());
  }
  return divergence(P);
}

}  // namespace detail

/// Builds the frame for displacement X - id; throws DiffeomorphismLoss if
/// det DX <= 0 at any node.
inline FlowFrame flow_frame(const Field& displacement, double t) {
  const Grid& g = displacement.grid();
  if (!displacement.is_vector()) throw std::invalid_argument("displacement must be a vector field");
  const int n = g.dim();
  FlowFrame fr;
  fr.t = t;
  fr.displacement = displacement;
  fr.DX = gradient(displacement);
  fr.A = Field::matrix(g);
  fr.adj = Field::matrix(g);
  fr.J = Field::scalar(g);
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    for (int a = 0; a < n; ++a) fr.DX.at(a * n + a, k) += 1.0;
    const detail::Mat d = detail::load_matrix(fr.DX, k, n);
    detail::Mat adj;
    const double J = detail::adjugate(d, n, adj);
    if (!(J > 0.0)) throw DiffeomorphismLoss(k, t, J);
    fr.J.at(0, k) = J;
    detail::store_matrix(fr.adj, k, n, adj);
    detail::store_matrix(fr.A, k, n, detail::inverse_matrix(d, n));
  }
  return fr;
}

namespace detail {

/// Streams flow frames in time order; displacement by the trapezoid rule.
inline void for_each_frame(const LagrangianState& s, const std::function<void(std::size_t, const FlowFrame&)>& fn) {
  const Grid& g = s.grid();
  Field d = Field::vector(g);
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    if (i > 0) {
      const double h = s.times[i] - s.times[i - 1];
      d.axpy(0.5 * h, s.u[i - 1]);
      d.axpy(0.5 * h, s.u[i]);
    }
    fn(i, flow_frame(d, s.times[i]));
  }
}

}  // namespace detail

inline FlowMapData flow_map(const LagrangianState& s) {
  s.validate();
  FlowMapData out;
  out.J_min = std::numeric_limits<double>::infinity();
  out.J_max = -out.J_min;
  detail::for_each_frame(s, [&](std::size_t, const FlowFrame& fr) {
    for (double v : fr.J.component(0)) {
      out.J_min = std::min(out.J_min, v);
      out.J_max = std::max(out.J_max, v);
    }
    out.frames.push_back(fr);
  });
  return out;
}

inline double FlowMapData::adjugate_defect() const {
  double worst = 0.0;
  for (const auto& fr : frames) {
    const Grid& g = fr.J.grid();
    const int n = g.dim();
    for (std::size_t k = 0; k < g.node_count(); ++k) {
      const double J = fr.J.at(0, k);
      for (int c = 0; c < n * n; ++c) {
        const double a = fr.adj.at(c, k);
        worst = std::max(worst, std::abs(a - J * fr.A.at(c, k)) / std::max(std::abs(a), 1.0));
      }
    }
  }
  return worst;
}

inline double FlowMapData::volume_defect() const {
  double worst = 0.0;
  for (const auto& fr : frames) {
    const double vol = std::pow(fr.J.grid().extent(), fr.J.grid().dim());
    worst = std::max(worst, std::abs(integral(fr.J)[0] - vol) / vol);
  }
  return worst;
}

struct CovResidual {
  double gradient = 0.0;             ///< (grad phi) o X vs A^T grad(phi o X)
  double divergence_trace = 0.0;     ///< (div v) o X vs Tr(A D(v o X))
  double divergence_adjugate = 0.0;  ///< (div v) o X vs J^{-1} div(adj (v o X))
  double laplacian = 0.0;            ///< (Lap v) o X vs J^{-1} div(adj A^T grad(v o X))

  double max() const { return std::max({gradient, divergence_trace, divergence_adjugate, laplacian}); }
};

/// Relative max-norm residuals of the change-of-variable identities at one
/// frame; compositions by periodic cubic interpolation.
inline CovResidual change_of_variable_residual(const Field& phi, const Field& v, const FlowFrame& fr) {
  const Grid& g = phi.grid();
  if (!phi.is_scalar() || !v.is_vector() || !(v.grid() == g) || !(fr.J.grid() == g)) {
    throw std::invalid_argument("change of variables needs a scalar and a vector field on the flow grid");
  }
  const int n = g.dim();
  const std::size_t nodes = g.node_count();
  const Field X = displaced_positions(fr.displacement);
  auto rel = [](const Field& lhs, const Field& rhs) {
    const double scale = max_abs(lhs);
    return max_abs(lhs - rhs) / (scale > 0.0 ? scale : 1.0);
  };
  CovResidual r;

  const Field grad_lhs = compose(gradient(phi), X);
  const Field grad_c = gradient(compose(phi, X));
  Field grad_rhs = Field::vector(g);
  for (std::size_t k = 0; k < nodes; ++k)
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += fr.A.at(j * n + i, k) * grad_c.at(j, k);
      grad_rhs.at(i, k) = acc;
    }
  r.gradient = rel(grad_lhs, grad_rhs);

  const Field vX = compose(v, X);
  const Field div_lhs = compose(divergence(v), X);
  const Field Dv = gradient(vX);
  Field tr = Field::scalar(g);
  Field av = Field::vector(g);
  for (std::size_t k = 0; k < nodes; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) acc += fr.A.at(i * n + j, k) * Dv.at(j * n + i, k);
    tr.at(0, k) = acc;
    for (int i = 0; i < n; ++i) {
      double w = 0.0;
      for (int j = 0; j < n; ++j) w += fr.adj.at(i * n + j, k) * vX.at(j, k);
      av.at(i, k) = w;
    }
  }
  r.divergence_trace = rel(div_lhs, tr);
  Field div_adj = divergence(av);
  for (std::size_t k = 0; k < nodes; ++k) div_adj.at(0, k) /= fr.J.at(0, k);
  r.divergence_adjugate = rel(div_lhs, div_adj);

  Field M = Field::matrix(g);
  for (std::size_t k = 0; k < nodes; ++k) {
    const detail::Mat adj = detail::load_matrix(fr.adj, k, n);
    const detail::Mat A = detail::load_matrix(fr.A, k, n);
    detail::store_matrix(M, k, n, (adj * A.transpose()).eval());
  }
  Field lap_rhs = detail::div_of_product(Dv, M);
  for (std::size_t k = 0; k < nodes; ++k)
    for (int i = 0; i < n; ++i) lap_rhs.at(i, k) /= fr.J.at(0, k);
  r.laplacian = rel(compose(laplacian(v), X), lap_rhs);
  return r;
}

/// f(u) = mu div((adj A^T - I) grad u)
///      + (mu + lambda) {(adj^T - I) grad Tr(A Du) + grad Tr((A - I) Du)}
/// at one time sample.
inline Field nonlinearity_at(const Field& u, const FlowFrame& fr, const LameParams& params) {
  const Grid& g = u.grid();
  const int n = g.dim();
  const std::size_t nodes = g.node_count();
  const Field W = gradient(u);
  Field M = Field::matrix(g);
  Field trA = Field::scalar(g);
  Field trAmI = Field::scalar(g);
  for (std::size_t k = 0; k < nodes; ++k) {
    const detail::Mat adj = detail::load_matrix(fr.adj, k, n);
    const detail::Mat A = detail::load_matrix(fr.A, k, n);
    detail::Mat m = adj * A.transpose();
    for (int a = 0; a < n; ++a) m(a, a) -= 1.0;
    detail::store_matrix(M, k, n, m);
    double s = 0.0, sw = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        s += A(i, j) * W.at(j * n + i, k);
        sw += W.at(j * n + i, k) * (i == j ? 1.0 : 0.0);
      }
    trA.at(0, k) = s;
    trAmI.at(0, k) = s - sw;
  }
  Field f = detail::div_of_product(W, M);
  f *= params.mu;
  const Field gs = gradient(trA);
  const Field gsm = gradient(trAmI);
  const double c = params.mu + params.lambda;
  for (std::size_t k = 0; k < nodes; ++k) {
    for (int i = 0; i < n; ++i) {
      double acc = gsm.at(i, k);
      for (int j = 0; j < n; ++j) acc += (fr.adj.at(j * n + i, k) - (i == j ? 1.0 : 0.0)) * gs.at(j, k);
      f.at(i, k) += c * acc;
    }
  }
  return f;
}

inline std::vector<Field> nonlinearity_f(const LagrangianState& s) {
  s.validate();
  std::vector<Field> out(s.u.size());
  detail::for_each_frame(s, [&](std::size_t i, const FlowFrame& fr) {
    out[i] = nonlinearity_at(s.u[i], fr, s.params);
  });
  return out;
}

inline std::vector<Field> nonlinearity_f(const LagrangianState& s, const FlowMapData& flow) {
  s.validate();
  if (flow.frames.size() != s.u.size()) throw std::invalid_argument("flow does not match the state");
  std::vector<Field> out(s.u.size());
  for (std::size_t i = 0; i < s.u.size(); ++i) out[i] = nonlinearity_at(s.u[i], flow.frames[i], s.params);
  return out;
}

/// L^1-in-time Besov norm of a time-sampled field (trapezoid).
inline double l1_besov(const std::vector<Field>& f, double dt, const BesovIndex& idx) {
  std::vector<double> v;
  v.reserve(f.size());
  for (const Field& x : f) v.push_back(besov_norm(x, idx).value);
  return detail::trapezoid(v, dt);
}

struct FlowEstimateReport {
  double lhs = 0.0;  ///< sup_t ||A - I||_{B^{n/p}} + sup_t ||adj - I||_{B^{n/p}}
  double rhs = 0.0;  ///< ||grad v||_{L^1(B^{n/p})}
  double ratio = 0.0;
  double c0 = 0.1;
  double p = 2.0;
  bool flagged = false;  ///< smallness rhs <= c0 violated
};

namespace detail {

inline FlowEstimateReport flow_estimate(const LagrangianState& s1, const LagrangianState* s2, double p,
                                        double c0) {
  s1.validate();
  if (s2) {
    s2->validate();
    if (s2->times != s1.times) throw std::invalid_argument("states must share their time grid");
  }
  const Grid& g = s1.grid();
  const int n = g.dim();
  const BesovIndex idx{n / p, p, 1.0};
  FlowEstimateReport rep;
  rep.p = p;
  rep.c0 = c0;
  std::vector<Field> grads(s1.u.size());
  std::vector<FlowFrame> other;
  if (s2) detail::for_each_frame(*s2, [&](std::size_t, const FlowFrame& fr) { other.push_back(fr); });
  double supA = 0.0, supAdj = 0.0;
  detail::for_each_frame(s1, [&](std::size_t i, const FlowFrame& fr) {
    Field A = fr.A, adj = fr.adj;
    if (s2) {
      A -= other[i].A;
      adj -= other[i].adj;
      grads[i] = gradient(s1.u[i] - s2->u[i]);
    } else {
      for (std::size_t k = 0; k < g.node_count(); ++k)
        for (int a = 0; a < n; ++a) {
          A.at(a * n + a, k) -= 1.0;
          adj.at(a * n + a, k) -= 1.0;
        }
      grads[i] = gradient(s1.u[i]);
    }
    supA = std::max(supA, besov_norm(A, idx).value);
    supAdj = std::max(supAdj, besov_norm(adj, idx).value);
  });
  rep.lhs = supA + supAdj;
  rep.rhs = l1_besov(grads, s1.dt(), idx);
  if (s2) {
    // smallness is a property of each state separately
    std::vector<Field> g1(s1.u.size()), g2(s1.u.size());
    for (std::size_t i = 0; i < s1.u.size(); ++i) {
      g1[i] = gradient(s1.u[i]);
      g2[i] = gradient(s2->u[i]);
    }
    rep.flagged = std::max(l1_besov(g1, s1.dt(), idx), l1_besov(g2, s1.dt(), idx)) > c0;
  } else {
    rep.flagged = rep.rhs > c0;
  }
  rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : 0.0;
  return rep;
}

}  // namespace detail

inline FlowEstimateReport flow_estimate_check(const LagrangianState& s, double p = 2.0, double c0 = 0.1) {
  return detail::flow_estimate(s, nullptr, p, c0);
}

/// Difference variant: sup ||A1 - A2|| + sup ||adj1 - adj2|| against
/// ||grad(v1 - v2)||_{L^1(B^{n/p})}.
inline FlowEstimateReport flow_difference_check(const LagrangianState& s1, const LagrangianState& s2,
                                                double p = 2.0, double c0 = 0.1) {
  return detail::flow_estimate(s1, &s2, p, c0);
}

struct PicardConfig {
  double T = 4.0;
  double dt = 0.02;
  double r = 1.0;   ///< ball radius in E_p
  double c = 0.1;   ///< smallness threshold on ||u0||_{B^{n/p-1}_{p,1}}
  double c0 = 0.1;  ///< flow-estimate smallness
  double contraction_tol = 0.5;
  int max_iter = 30;
  double tol_rel = 1e-8;  ///< stop when ||du||_{E_p} <= tol_rel * ||u0||_{B^{n/p-1}_{p,1}}
  double p = 2.0;
  StepperConfig stepper{0.02, 0.5, 1e-12, 2000, OperatorKind::Spectral, 0.0};

  void validate() const {
    if (!(T > 0.0 && dt > 0.0)) throw std::invalid_argument("Picard T and dt must be positive");
    if (!(r > 0.0 && c > 0.0 && c0 > 0.0)) throw std::invalid_argument("r, c and c0 must be positive");
    if (!(contraction_tol > 0.0 && tol_rel > 0.0)) throw std::invalid_argument("tolerances must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
    if (!(p > 1.0)) throw std::invalid_argument("p must exceed 1");
    stepper.validate();
  }
};

struct PicardDiagnostics {
  double u0_norm = 0.0;           ///< ||u0||_{B^{n/p-1}_{p,1}}
  double stop_tol = 0.0;
  std::vector<double> ep_norms;   ///< ||u^(k)||_{E_p}, k = 0, 1, ...
  std::vector<double> deltas;     ///< ||u^(k+1) - u^(k)||_{E_p}
  std::vector<double> factors;    ///< deltas[k] / deltas[k-1]
  int iterations = 0;             ///< index k with deltas[k] <= stop_tol
  bool converged = false;
  bool flagged = false;           ///< ||u0|| > c: outside the certified regime
  bool left_ball = false;         ///< some iterate had E_p norm above r
  int cg_iterations = 0;          ///< inner CG iterations over all linear solves

  double max_factor() const {
    double m = 0.0;
    for (double f : factors) m = std::max(m, f);
    return m;
  }
  double final_norm() const { return ep_norms.empty() ? 0.0 : ep_norms.back(); }
  /// ||u||_{E_p} / ||u0||, the empirical constant of ||u||_{E_p} <~ ||u0||.
  double growth_constant() const { return u0_norm > 0.0 ? final_norm() / u0_norm : 0.0; }
};

struct PicardResult {
  LagrangianState state;
  PicardDiagnostics diag;
};

inline double ep_total(const LagrangianState& s, double p) { return ep_norm(s.trajectory(), s.params, p).total(); }

namespace detail {

inline std::vector<Field> difference(const std::vector<Field>& a, const std::vector<Field>& b) {
  std::vector<Field> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

}  // namespace detail

/// Picard iteration u^(k+1) = solve(rho0 du/dt - L u = f(u^(k))), u^(0) the
/// linear solution. One theta step per time sample interval.
inline PicardResult picard_solve(const Coefficient& rho0, const LameParams& params, const Field& u0,
                                 const PicardConfig& cfg) {
  cfg.validate();
  params.validate();
  const Grid& g = rho0.grid();
  if (!u0.is_vector() || !(u0.grid() == g)) throw std::invalid_argument("u0 must be a vector field on the density grid");
  require_finite(u0, "initial velocity");
  const std::vector<double> times = uniform_times(cfg.T, cfg.dt);
  StepperConfig sc = cfg.stepper;
  sc.dt = times[1] - times[0];
  sc.dt_relative = 0.0;
  LameEvolver ev(rho0, params, sc);

  PicardResult res{LagrangianState{times, {}, rho0, params, sc}, {}};
  PicardDiagnostics& dg = res.diag;
  dg.u0_norm = besov_norm(u0, BesovIndex{g.dim() / cfg.p - 1.0, cfg.p, 1.0}).value;
  dg.stop_tol = cfg.tol_rel * dg.u0_norm;
  dg.flagged = dg.u0_norm > cfg.c;

  auto solve = [&](const std::vector<Field>* f) {
    const Trajectory tr = f ? ev.run(u0, times, sampled_forcing(times, *f)) : ev.run(u0, times);
    dg.cg_iterations += tr.total_cg_iterations;
    return tr.states;
  };
  auto norm_of = [&](const std::vector<Field>& u) {
    LagrangianState s{times, u, rho0, params, sc};
    return ep_total(s, cfg.p);
  };

  res.state.u = solve(nullptr);
  dg.ep_norms.push_back(norm_of(res.state.u));
  dg.left_ball = dg.ep_norms.back() > cfg.r;
  for (int k = 0; k < cfg.max_iter; ++k) {
    const std::vector<Field> f = nonlinearity_f(res.state);
    std::vector<Field> next = solve(&f);
    const double delta = norm_of(detail::difference(next, res.state.u));
    if (!std::isfinite(delta)) throw NumericalError("Picard update is not finite");
    dg.deltas.push_back(delta);
    if (dg.deltas.size() > 1) {
      const double prev = dg.deltas[dg.deltas.size() - 2];
      dg.factors.push_back(prev > 0.0 ? delta / prev : 0.0);
    }
    res.state.u = std::move(next);
    dg.ep_norms.push_back(norm_of(res.state.u));
    dg.left_ball = dg.left_ball || dg.ep_norms.back() > cfg.r;
    if (delta <= dg.stop_tol) {
      dg.iterations = k;
      dg.converged = true;
      return res;
    }
  }
  throw PicardDivergence(dg.factors);
}

/// Defect of the discrete nonlinear system
/// rho0 (u_{i+1} - u_i)/dt - theta (L u_{i+1} + f_{i+1}) - (1 - theta)(L u_i + f_i)
/// in L^1(B^{n/p-1}_{p,1}).
inline double nonlinear_residual(const LagrangianState& s, double p = 2.0) {
  s.validate();
  const Grid& g = s.grid();
  const BesovIndex idx{g.dim() / p - 1.0, p, 1.0};
  const LameEvolver ev(s.rho0, s.params, s.stepper);
  const std::vector<Field> f = nonlinearity_f(s);
  const double th = s.stepper.theta;
  const double dt = s.dt();
  double acc = 0.0;
  Field prev = ev.apply_operator(s.u[0]);
  prev += f[0];
  for (std::size_t i = 0; i + 1 < s.u.size(); ++i) {
    Field next = ev.apply_operator(s.u[i + 1]);
    next += f[i + 1];
    Field r = multiply(s.rho0.rho, s.u[i + 1] - s.u[i]);
    r *= 1.0 / dt;
    r.axpy(-th, next);
    r.axpy(-(1.0 - th), prev);
    acc += dt * besov_norm(r, idx).value;
    prev = std::move(next);
  }
  return acc;
}

struct GradSupIntegral {
  double value = 0.0;     ///< trapezoid of max_y |grad u(t, y)| over [0, T]
  double tail = 0.0;      ///< exponential extrapolation beyond T
  double decay_rate = 0.0;
  double extrapolated() const { return value + tail; }
};

/// Pointwise norm is the Frobenius norm of the Jacobian.
inline GradSupIntegral grad_sup_integral(const LagrangianState& s) {
  s.validate();
  std::vector<double> v;
  v.reserve(s.u.size());
  for (const Field& u : s.u) {
    const Field D = gradient(u);
    double m = 0.0;
    for (std::size_t k = 0; k < D.nodes(); ++k) {
      double a = 0.0;
      for (int c = 0; c < D.components(); ++c) a += D.at(c, k) * D.at(c, k);
      m = std::max(m, a);
    }
    v.push_back(std::sqrt(m));
  }
  GradSupIntegral out;
  out.value = detail::trapezoid(v, s.dt());
  const std::size_t last = v.size() - 1;
  const std::size_t i0 = (3 * last) / 4;
  if (i0 < last && v[i0] > 0.0 && v[last] > 0.0) {
    out.decay_rate = std::log(v[i0] / v[last]) / (s.times[last] - s.times[i0]);
  }
  if (v[last] == 0.0) {
    out.tail = 0.0;
  } else {
    out.tail = out.decay_rate > 0.0 ? v[last] / out.decay_rate : std::numeric_limits<double>::infinity();
  }
  return out;
}

struct InversionConfig {
  double tol = 1e-12;
  int max_iter = 200;
  double damping = 1.0;
};

/// Solves y + d(y) = x by y <- y + w (x - d(y) - y) starting from y = x - d(x).
inline Point invert_point(const CubicInterpolant& d, const Point& x, const Point& guess,
                          const InversionConfig& cfg, std::size_t node_for_errors = 0) {
  const int n = d.grid().dim();
  Point y = guess;
  std::array<double, 3> dv{};
  double defect = 0.0;
  for (int it = 0; it < cfg.max_iter; ++it) {
    d(y, std::span<double>(dv.data(), n));
    defect = 0.0;
    for (int a = 0; a < n; ++a) {
      const double r = x[a] - dv[a] - y[a];
      y[a] += cfg.damping * r;
      defect = std::max(defect, std::abs(r));
    }
    if (defect <= cfg.tol) return y;
  }
  throw InversionFailure(node_for_errors, defect);
}

/// Positions X^{-1}(x) at every grid node x, as absolute coordinates.
inline Field invert_flow(const Field& d, const InversionConfig& cfg = {}) {
  const Grid& g = d.grid();
  const CubicInterpolant di(d);
  Field y = Field::vector(g);
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const Point x = g.position(k);
    Point guess = x;
    for (int a = 0; a < g.dim(); ++a) guess[a] -= d.at(a, k);
    const Point r = invert_point(di, x, guess, cfg, k);
    for (int a = 0; a < g.dim(); ++a) y.at(a, k) = r[a];
  }
  return y;
}

/// max_y |X^{-1}(X(y)) - y|.
inline double roundtrip_defect(const FlowFrame& fr, const InversionConfig& cfg = {}) {
  const Grid& g = fr.J.grid();
  const CubicInterpolant di(fr.displacement);
  double worst = 0.0;
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const Point y = g.position(k);
    Point x = y;
    for (int a = 0; a < g.dim(); ++a) x[a] += fr.displacement.at(a, k);
    Point guess = x;
    std::array<double, 3> dv{};
    di(x, std::span<double>(dv.data(), g.dim()));
    for (int a = 0; a < g.dim(); ++a) guess[a] -= dv[a];
    const Point r = invert_point(di, x, guess, cfg, k);
    for (int a = 0; a < g.dim(); ++a) worst = std::max(worst, std::abs(r[a] - y[a]));
  }
  return worst;
}

/// Eulerian fields at a subset of the time samples.
struct EulerianTrajectory {
  std::vector<double> times;
  std::vector<std::size_t> indices;  ///< Lagrangian sample index of each entry
  std::vector<Field> rho;
  std::vector<Field> u;
};

/// rho(t, x) = (rho0 / J)(X^{-1}(t, x)) and u(t, x) = u(t, X^{-1}(t, x)) at
/// every stride-th sample (the last sample is always included).
inline EulerianTrajectory pushforward_eulerian(const LagrangianState& s, const FlowMapData& flow,
                                               std::size_t stride = 1, const InversionConfig& cfg = {}) {
  s.validate();
  if (flow.frames.size() != s.u.size()) throw std::invalid_argument("flow does not match the state");
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  EulerianTrajectory out;
  const std::size_t last = s.u.size() - 1;
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < last; i += stride) picks.push_back(i);
  picks.push_back(last);
  for (std::size_t i : picks) {
    const FlowFrame& fr = flow.frames[i];
    const Field Y = invert_flow(fr.displacement, cfg);
    Field rho = compose(s.rho0.rho, Y);
    const Field J = compose(fr.J, Y);
    for (std::size_t k = 0; k < rho.nodes(); ++k) rho.at(0, k) /= J.at(0, k);
    out.times.push_back(s.times[i]);
    out.indices.push_back(i);
    out.rho.push_back(std::move(rho));
    out.u.push_back(compose(s.u[i], Y));
  }
  return out;
}

struct DensityTransportReport {
  double nodewise_defect = 0.0;    ///< max |J(y) rho(t, X(y)) - rho0(y)| / max rho0
  double continuity_defect = 0.0;  ///< max |J exp(-int Tr(A Du)) - 1|
  double grid_defect = 0.0;        ///< as nodewise, with rho(t) read from its grid samples
  double mass_defect = 0.0;        ///< max_t |int rho(t) - int rho0| / int rho0
};

/// Checks J rho o X = rho0. The nodewise defect evaluates the push-forward
/// density as a function at X(y); the continuity defect integrates
/// d/dt log rho(t, X) = -Tr(A Du) along each trajectory instead; the grid
/// defect interpolates the stored Eulerian samples.
inline DensityTransportReport density_transport_check(const LagrangianState& s, const FlowMapData& flow,
                                                      const EulerianTrajectory& euler,
                                                      const InversionConfig& cfg = {}) {
  s.validate();
  const Grid& g = s.grid();
  const int n = g.dim();
  const std::size_t nodes = g.node_count();
  const double rho_scale = max_abs(s.rho0.rho);
  const double mass0 = integral(s.rho0.rho)[0];
  DensityTransportReport rep;

  std::vector<double> log_growth(nodes, 0.0);
  Field prev_tr;
  std::size_t next_euler = 0;
  for (std::size_t i = 0; i < s.u.size(); ++i) {
    const FlowFrame& fr = flow.frames[i];
    const Field D = gradient(s.u[i]);
    Field tr = Field::scalar(g);
    for (std::size_t k = 0; k < nodes; ++k) {
      double acc = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) acc += fr.A.at(a * n + b, k) * D.at(b * n + a, k);
      tr.at(0, k) = acc;
    }
    if (i > 0) {
      const double h = s.times[i] - s.times[i - 1];
      for (std::size_t k = 0; k < nodes; ++k) log_growth[k] += 0.5 * h * (prev_tr.at(0, k) + tr.at(0, k));
    }
    for (std::size_t k = 0; k < nodes; ++k) {
      rep.continuity_defect =
          std::max(rep.continuity_defect, std::abs(fr.J.at(0, k) * std::exp(-log_growth[k]) - 1.0));
    }
    prev_tr = std::move(tr);

    if (next_euler < euler.indices.size() && euler.indices[next_euler] == i) {
      const Field& rho_t = euler.rho[next_euler];
      const CubicInterpolant di(fr.displacement), r0i(s.rho0.rho), Ji(fr.J), rti(rho_t);
      rep.mass_defect = std::max(rep.mass_defect, std::abs(integral(rho_t)[0] - mass0) / mass0);
      std::array<double, 3> v{};
      for (std::size_t k = 0; k < nodes; ++k) {
        const Point y = g.position(k);
        Point x = y;
        for (int a = 0; a < n; ++a) x[a] += fr.displacement.at(a, k);
        // rho(t, x) through the push-forward definition
        Point guess = x;
        di(x, std::span<double>(v.data(), n));
        for (int a = 0; a < n; ++a) guess[a] -= v[a];
        const Point yy = invert_point(di, x, guess, cfg, k);
        r0i(yy, std::span<double>(v.data(), 1));
        const double r0 = v[0];
        Ji(yy, std::span<double>(v.data(), 1));
        const double rho_fn = r0 / v[0];
        rti(x, std::span<double>(v.data(), 1));
        const double rho_grid = v[0];
        const double J = fr.J.at(0, k);
        const double target = s.rho0.rho.at(0, k);
        rep.nodewise_defect = std::max(rep.nodewise_defect, std::abs(J * rho_fn - target) / rho_scale);
        rep.grid_defect = std::max(rep.grid_defect, std::abs(J * rho_grid - target) / rho_scale);
      }
      ++next_euler;
    }
  }
  return rep;
}

/// One amplitude of a smallness scan.
struct SmallnessProbe {
  double amplitude = 0.0;
  double u0_norm = 0.0;
  bool converged = false;
  double max_factor = 0.0;
  int iterations = 0;
  std::string error;
};

struct SmallnessScan {
  std::vector<SmallnessProbe> probes;
  double certified_amplitude = 0.0;  ///< largest amplitude that contracted within the tolerance
  double certified_norm = 0.0;       ///< its ||u0||_{B^{n/p-1}_{p,1}}
};

/// Runs picard_solve on amplitude * shape for increasing amplitudes and
/// records the largest one that converged with all factors <= contraction_tol.
inline SmallnessScan certify_smallness(const Coefficient& rho0, const LameParams& params, const Field& shape,
                                       std::vector<double> amplitudes, PicardConfig cfg) {
  std::sort(amplitudes.begin(), amplitudes.end());
  SmallnessScan scan;
  cfg.c = std::numeric_limits<double>::max();
  for (double a : amplitudes) {
    SmallnessProbe pr;
    pr.amplitude = a;
    try {
      const PicardResult r = picard_solve(rho0, params, a * shape, cfg);
      pr.u0_norm = r.diag.u0_norm;
      pr.converged = r.diag.converged;
      pr.max_factor = r.diag.max_factor();
      pr.iterations = r.diag.iterations;
    } catch (const PicardDivergence& e) {
      pr.error = e.name();
      pr.max_factor = 0.0;
      for (double f : e.factors()) pr.max_factor = std::max(pr.max_factor, f);
    } catch (const NumericalError& e) {
      pr.error = e.name();
    }
    if (pr.converged && pr.max_factor <= cfg.contraction_tol) {
      scan.certified_amplitude = a;
      scan.certified_norm = pr.u0_norm;
    }
    scan.probes.push_back(pr);
  }
  return scan;
}

}  // namespace lamelab
