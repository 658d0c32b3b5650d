#pragma once

// Eulerian reference solver for
//   d_t rho + div(rho u) = 0,  rho (d_t u + u . grad u) - L u = 0,
// by operator splitting: semi-Lagrangian transport, then one implicit viscous
// theta step with the transported density frozen. Shares no code with the
// Lagrangian pipeline beyond interpolation and the linear stepper.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lamelab/field_ops.hpp"
#include "lamelab/interpolation.hpp"
#include "lamelab/lagrangian.hpp"
#include "lamelab/varcoef.hpp"

namespace lamelab {

struct EulerianConfig {
  double T = 4.0;
  double dt = 0.02;
  bool advect = true;  ///< false drops u . grad u and the transport of rho
  double cfl = 1.0;    ///< reject dt when dt max|u| / h exceeds this
  std::size_t stride = 1;
  StepperConfig stepper{0.02, 0.5, 1e-12, 2000, OperatorKind::Spectral, 0.0};
};

namespace detail {

/// Departure points x - dt u(x - dt/2 u(x)) as absolute coordinates.
inline Field departure_points(const Field& u, double dt) {
  const Grid& g = u.grid();
  const int n = g.dim();
  Field mid = Field::vector(g);
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const Point x = g.position(k);
    for (int a = 0; a < n; ++a) mid.at(a, k) = x[a] - 0.5 * dt * u.at(a, k);
  }
  const Field um = compose(u, mid);
  Field dep = Field::vector(g);
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const Point x = g.position(k);
    for (int a = 0; a < n; ++a) dep.at(a, k) = x[a] - dt * um.at(a, k);
  }
  return dep;
}

inline double velocity_cfl(const Field& u, double dt) {
  double m = 0.0;
  for (std::size_t k = 0; k < u.nodes(); ++k) m = std::max(m, magnitude_at(u, k));
  return dt * m / u.grid().spacing();
}

}  // namespace detail

/// Returns samples at every stride-th step and at T.
inline EulerianTrajectory eulerian_reference_solve(const Coefficient& rho0, const LameParams& params,
                                                   const Field& u0, const EulerianConfig& cfg) {
  params.validate();
  cfg.stepper.validate();
  if (cfg.stride == 0) throw std::invalid_argument("stride must be positive");
  const Grid& g = rho0.grid();
  if (!u0.is_vector() || !(u0.grid() == g)) throw std::invalid_argument("u0 must be a vector field on the density grid");
  require_finite(u0, "initial velocity");
  const std::vector<double> times = uniform_times(cfg.T, cfg.dt);
  const double dt = times[1] - times[0];
  StepperConfig sc = cfg.stepper;
  sc.dt = dt;
  sc.dt_relative = 0.0;

  EulerianTrajectory out;
  Field rho = rho0.rho;
  Field u = u0;
  auto record = [&](std::size_t i) {
    out.times.push_back(times[i]);
    out.indices.push_back(i);
    out.rho.push_back(rho);
    out.u.push_back(u);
  };
  record(0);
  const std::size_t steps = times.size() - 1;
  for (std::size_t i = 0; i < steps; ++i) {
    Field ustar = u;
    if (cfg.advect) {
      if (detail::velocity_cfl(u, dt) > cfg.cfl) {
        throw std::invalid_argument("advective CFL violated: reduce dt");
      }
      const Field dep = detail::departure_points(u, dt);
      const Field div_u = divergence(u);
      const Field div_dep = compose(div_u, dep);
      Field rho_new = compose(rho, dep);
      for (std::size_t k = 0; k < g.node_count(); ++k) {
        rho_new.at(0, k) *= std::exp(-0.5 * dt * (div_u.at(0, k) + div_dep.at(0, k)));
      }
      rho = std::move(rho_new);
      ustar = compose(u, dep);
    }
    double lo = rho.at(0, 0), hi = lo;
    for (double v : rho.component(0)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!(lo > 0.0)) throw NumericalError("transported density lost positivity");
    const Coefficient frozen(rho, std::min({1.0, lo, 1.0 / hi}));
    LameEvolver ev(frozen, params, sc);
    u = ev.step(ustar, times[i], dt, Forcing{});
    if ((i + 1) % cfg.stride == 0 || i + 1 == steps) record(i + 1);
  }
  return out;
}

/// Relative L^2 distance |a - b| / |b|.
inline double relative_l2(const Field& a, const Field& b) {
  const double nb = lp_norm(b, 2.0);
  return lp_norm(a - b, 2.0) / (nb > 0.0 ? nb : 1.0);
}

}  // namespace lamelab
