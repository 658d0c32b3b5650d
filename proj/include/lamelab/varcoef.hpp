#pragma once

// Time integration of rho(x) du/dt - L u = f with a rough density rho.
// theta-scheme in time; each step solves the SPD node-space system
// (rho/dt - theta L) u_new = (rho/dt + (1-theta) L) u_old + f_bar by
// conjugate gradients, preconditioned with the constant-coefficient operator
// (mean(rho)/dt - theta L)^{-1} applied mode by mode.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "lamelab/error.hpp"
#include "lamelab/spectral_ops.hpp"

namespace lamelab {

/// Density rho with ellipticity bound m <= rho <= 1/m and b = 1/rho.
struct Coefficient {
  Field rho;
  double m = 1.0;
  Field b;

  Coefficient() = default;

  Coefficient(Field density, double bound) : rho(std::move(density)), m(bound) {
    if (!rho.is_scalar()) throw std::invalid_argument("density must be a scalar field");
    if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("ellipticity bound must lie in (0, 1]");
    require_finite(rho, "density");
    b = Field::scalar(rho.grid());
    const double tol = 1e-12;
    for (std::size_t k = 0; k < rho.nodes(); ++k) {
      const double r = rho.at(0, k);
      if (r < m * (1 - tol) || r > (1 + tol) / m) {
        throw std::invalid_argument("density leaves [m, 1/m] at node " + std::to_string(k));
      }
      b.at(0, k) = 1.0 / r;
    }
  }

  const Grid& grid() const { return rho.grid(); }

  double mean() const {
    double s = 0.0;
    for (double v : rho.component(0)) s += v;
    return s / static_cast<double>(rho.nodes());
  }

  bool is_constant() const {
    const auto r = rho.component(0);
    return std::all_of(r.begin(), r.end(), [&](double v) { return v == r[0]; });
  }
};

inline Coefficient constant_coefficient(const Grid& g, double value = 1.0) {
  const double m = std::min(value, 1.0 / value);
  return Coefficient(Field::scalar(g, value), m);
}

/// Smoothed checkerboard: rho = exp(ln(1/m') s(x)), s in [-1, 1] a product of
/// tanh(sin(2 pi cells x_a / L)/width) profiles, m' = 1.1 m so that rho
/// stays inside [m, 1/m] with a 10% margin.
inline Coefficient checkerboard_coefficient(const Grid& g, double m, int cells = 2,
                                            double width = 0.15) {
  if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("ellipticity bound must lie in (0, 1]");
  const double mm = std::min(1.0, 1.1 * m);
  const double amp = std::log(1.0 / mm);
  const double norm = std::tanh(1.0 / width);
  const double L = g.extent();
  Field rho = sample_scalar(g, [&](const Point& x) {
    double s = 1.0;
    for (int a = 0; a < g.dim(); ++a) s *= std::tanh(std::sin(2 * M_PI * cells * x[a] / L) / width) / norm;
    return std::exp(amp * s);
  });
  return Coefficient(std::move(rho), m);
}

/// Thresholded random trigonometric polynomial: rho = exp(ln(1/m') tanh(P/w)),
/// P a random field with unit RMS and integer wavenumbers 1 <= |k| <= k_max.
inline Coefficient trig_coefficient(const Grid& g, double m, std::uint64_t seed, int k_max = 3,
                                    double width = 0.1) {
  if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("ellipticity bound must lie in (0, 1]");
  const double mm = std::min(1.0, 1.1 * m);
  const double amp = std::log(1.0 / mm);
  const Field P = random_field(g, 1, seed, 1.0, k_max, 0.0);
  Field rho = Field::scalar(g);
  for (std::size_t k = 0; k < rho.nodes(); ++k) rho.at(0, k) = std::exp(amp * std::tanh(P.at(0, k) / width));
  return Coefficient(std::move(rho), m);
}

struct StepperConfig {
  double dt = 1e-3;
  double theta = 0.5;
  double tol = 1e-10;
  int max_iter = 500;
  OperatorKind kind = OperatorKind::Spectral;
  /// When positive, steps inside (t_i, t_{i+1}] are capped at dt_relative * t_{i+1}.
  double dt_relative = 0.0;

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
    if (!(theta >= 0.5 && theta <= 1.0)) throw std::invalid_argument("theta must lie in [1/2, 1]");
    if (!(tol > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
    if (dt_relative < 0.0) throw std::invalid_argument("dt_relative must be nonnegative");
  }
};

/// Writes f(t) into the supplied vector field.
using Forcing = std::function<void(double, Field&)>;

/// Piecewise-linear forcing from samples at the given times (held constant
/// outside their range).
inline Forcing sampled_forcing(std::vector<double> times, std::vector<Field> samples) {
  if (times.size() != samples.size() || times.empty()) {
    throw std::invalid_argument("sampled forcing needs matching nonempty times and samples");
  }
  return [times = std::move(times), samples = std::move(samples)](double t, Field& f) {
    if (t <= times.front()) {
      f = samples.front();
      return;
    }
    if (t >= times.back()) {
      f = samples.back();
      return;
    }
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
    const double w = (t - times[i]) / (times[i + 1] - times[i]);
    f = samples[i];
    f *= 1.0 - w;
    f.axpy(w, samples[i + 1]);
  };
}

struct Trajectory {
  std::vector<double> times;
  std::vector<Field> states;
  int steps = 0;
  int max_cg_iterations = 0;
  long total_cg_iterations = 0;
};

/// One evolution run: owns the operator tables and the preconditioner for the
/// step size in use.
class LameEvolver {
 public:
  LameEvolver(Coefficient coef, LameParams params, StepperConfig cfg)
      : coef_(std::move(coef)), params_(params), cfg_(cfg), symbol_(coef_.grid(), params, cfg.kind) {
    params_.validate();
    cfg_.validate();
    rho_mean_ = coef_.mean();
    const std::size_t m = coef_.grid().mode_count();
    const int n = coef_.grid().dim();
    sym_.resize(m * n * n);
    Mat3 M;
    for (std::size_t k = 0; k < m; ++k) {
      symbol_.matrix(k, M);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sym_[(k * n + i) * n + j] = M[i][j];
    }
  }

  const Coefficient& coefficient() const { return coef_; }
  const LameParams& params() const { return params_; }
  const StepperConfig& config() const { return cfg_; }

  /// L u with the configured operator kind.
  Field apply_operator(const Field& u) const {
    Spectrum s = forward(u);
    apply_table(s, sym_);
    return inverse(s);
  }

  /// Single theta step of size dt from time t.
  Field step(const Field& u, double t, double dt, const Forcing& forcing) {
    prepare(dt);
    const Grid& g = coef_.grid();
    const double th = cfg_.theta;
    Field rhs = multiply(coef_.rho, u);
    rhs *= 1.0 / dt;
    if (th < 1.0) rhs.axpy(1.0 - th, apply_operator(u));
    if (forcing) {
      Field f = Field::vector(g);
      if (th < 1.0) {
        forcing(t, f);
        rhs.axpy(1.0 - th, f);
      }
      forcing(t + dt, f);
      rhs.axpy(th, f);
    }
    return solve(rhs, u, dt);
  }

  /// Advances u0 from t_grid.front() through every t_grid point.
  Trajectory run(const Field& u0, const std::vector<double>& t_grid, const Forcing& forcing = {}) {
    if (t_grid.empty()) throw std::invalid_argument("time grid is empty");
    if (!u0.is_vector() || !(u0.grid() == coef_.grid())) {
      throw std::invalid_argument("initial data must be a vector field on the coefficient grid");
    }
    require_finite(u0, "initial data");
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
      if (!(t_grid[i] > t_grid[i - 1])) throw std::invalid_argument("time grid must be increasing");
    }
    Trajectory tr;
    tr.times = t_grid;
    tr.states.reserve(t_grid.size());
    tr.states.push_back(u0);
    Field u = u0;
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
      const double t0 = t_grid[i - 1];
      const double span = t_grid[i] - t0;
      double h = cfg_.dt;
      if (cfg_.dt_relative > 0.0) h = std::min(h, cfg_.dt_relative * t_grid[i]);
      const int nsteps = std::max(1, static_cast<int>(std::ceil(span / h - 1e-9)));
      const double dt = span / nsteps;
      for (int k = 0; k < nsteps; ++k) {
        u = step(u, t0 + k * dt, dt, forcing);
        ++tr.steps;
        tr.max_cg_iterations = std::max(tr.max_cg_iterations, last_iterations_);
        tr.total_cg_iterations += last_iterations_;
      }
      tr.states.push_back(u);
    }
    return tr;
  }

  int last_iterations() const { return last_iterations_; }
  double last_residual() const { return last_residual_; }

 private:
  void apply_table(Spectrum& s, const std::vector<double>& table) const {
    const int n = s.grid.dim();
    cplx v[3];
    const std::size_t modes = s.modes();
    for (std::size_t k = 0; k < modes; ++k) {
      const double* M = &table[k * n * n];
      for (int i = 0; i < n; ++i) v[i] = s.at(i, k);
      for (int i = 0; i < n; ++i) {
        cplx acc = 0.0;
        for (int j = 0; j < n; ++j) acc += M[i * n + j] * v[j];
        s.at(i, k) = acc;
      }
    }
  }

  void prepare(double dt) {
    if (dt == prepared_dt_) return;
    const int n = coef_.grid().dim();
    const std::size_t m = coef_.grid().mode_count();
    precond_.resize(m * n * n);
    const double th = cfg_.theta;
    for (std::size_t k = 0; k < m; ++k) {
      Eigen::Matrix3d A = Eigen::Matrix3d::Identity();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          A(i, j) = (i == j ? rho_mean_ / dt : 0.0) - th * sym_[(k * n + i) * n + j];
      const Eigen::MatrixXd inv = A.topLeftCorner(n, n).inverse();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) precond_[(k * n + i) * n + j] = inv(i, j);
    }
    prepared_dt_ = dt;
  }

  Field system_apply(const Field& x, double dt) const {
    Field y = multiply(coef_.rho, x);
    y *= 1.0 / dt;
    y.axpy(-cfg_.theta, apply_operator(x));
    return y;
  }

  Field precondition(const Field& r) const {
    Spectrum s = forward(r);
    apply_table(s, precond_);
    return inverse(s);
  }

  static double dot(const Field& a, const Field& b) {
    double s = 0.0;
    auto x = a.values();
    auto y = b.values();
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
  }

  Field solve(const Field& rhs, const Field& guess, double dt) {
    const double bnorm = std::sqrt(dot(rhs, rhs));
    last_iterations_ = 0;
    last_residual_ = 0.0;
    if (bnorm == 0.0) return Field(rhs.grid(), rhs.components());
    Field x = guess;
    Field r = rhs - system_apply(x, dt);
    double rnorm = std::sqrt(dot(r, r));
    if (rnorm <= cfg_.tol * bnorm) {
      last_residual_ = rnorm / bnorm;
      return x;
    }
    Field z = precondition(r);
    Field p = z;
    double rz = dot(r, z);
    for (int it = 1; it <= cfg_.max_iter; ++it) {
      const Field Ap = system_apply(p, dt);
      const double alpha = rz / dot(p, Ap);
      x.axpy(alpha, p);
      r.axpy(-alpha, Ap);
      rnorm = std::sqrt(dot(r, r));
      last_iterations_ = it;
      last_residual_ = rnorm / bnorm;
      if (!std::isfinite(rnorm)) break;
      if (last_residual_ <= cfg_.tol) return x;
      z = precondition(r);
      const double rz_new = dot(r, z);
      p *= rz_new / rz;
      p += z;
      rz = rz_new;
    }
    throw SolverDivergence(last_residual_, last_iterations_);
  }

  Coefficient coef_;
  LameParams params_;
  StepperConfig cfg_;
  LameSymbol symbol_;
  double rho_mean_ = 1.0;
  std::vector<double> sym_;
  std::vector<double> precond_;
  double prepared_dt_ = -1.0;
  int last_iterations_ = 0;
  double last_residual_ = 0.0;
};

inline Trajectory evolve(const Coefficient& coef, const LameParams& params, const Field& u0,
                         const Forcing& forcing, const std::vector<double>& t_grid,
                         const StepperConfig& cfg) {
  LameEvolver ev(coef, params, cfg);
  return ev.run(u0, t_grid, forcing);
}

/// rho-weighted L^2 norm.
inline double rho_norm(const Coefficient& coef, const Field& u) {
  return std::sqrt(std::max(0.0, weighted_inner(coef.rho, u, u)));
}

struct DissipationReport {
  std::vector<double> norms;
  double max_relative_increase = 0.0;
  bool monotone = true;
};

/// Checks that the rho-weighted energy never increases along a trajectory.
inline DissipationReport energy_dissipation_check(const Coefficient& coef, const Trajectory& tr,
                                                  double slack = 1e-10) {
  DissipationReport rep;
  for (const Field& u : tr.states) rep.norms.push_back(rho_norm(coef, u));
  for (std::size_t i = 1; i < rep.norms.size(); ++i) {
    const double scale = std::max(rep.norms[i - 1], 1e-300);
    const double inc = (rep.norms[i] - rep.norms[i - 1]) / scale;
    rep.max_relative_increase = std::max(rep.max_relative_increase, inc);
    if (inc > slack) rep.monotone = false;
  }
  return rep;
}

/// max_t |int rho u(t) - int rho u0| / ||u0||_1 (componentwise max).
inline double conservation_defect(const Coefficient& coef, const Trajectory& tr) {
  const Field& u0 = tr.states.front();
  const auto m0 = integral(multiply(coef.rho, u0));
  const double scale = std::max(lp_norm(u0, 1.0), 1e-300);
  double worst = 0.0;
  for (const Field& u : tr.states) {
    const auto m = integral(multiply(coef.rho, u));
    for (std::size_t c = 0; c < m.size(); ++c) worst = std::max(worst, std::abs(m[c] - m0[c]));
  }
  return worst / scale;
}

}  // namespace lamelab
