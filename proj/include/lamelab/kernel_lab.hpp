#pragma once

// Fundamental-matrix extraction for rho du/dt = L u and the envelope,
// Hoelder, symmetry and twisted-norm diagnostics built on it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lamelab/varcoef.hpp"

namespace lamelab {

/// Column block x -> K_t(x, y0): matrix field with entry (i, k) stored as
/// component i*n + k; S_t(x, y0) = K_t(x, y0) b(y0).
struct KernelSlice {
  Grid grid;
  std::size_t source = 0;
  double t = 0.0;
  Field K;
  double rho_source = 1.0;
  double b_source = 1.0;
  double t_smooth = 0.0;  ///< > 0 when the delta was pre-smoothed

  Field S() const {
    Field s = K;
    s *= b_source;
    return s;
  }
};

/// Spectral norm of the n x n matrix stored at a node of a matrix field.
inline double matrix_norm_at(const Field& M, std::size_t node) {
  const int n = M.grid().dim();
  Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = M.at(i * n + j, node);
  const Eigen::Matrix3d AtA = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(AtA, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// Extracts K_t(., y0) for every t in t_list by evolving e_k delta_{y0}/h^n.
/// With presmooth, the delta is first smoothed by the constant-coefficient
/// Lame semigroup over t_smooth = 2 h^2.
inline std::vector<KernelSlice> kernel_column(const Coefficient& coef, const LameParams& params,
                                              std::size_t y0, const std::vector<double>& t_list,
                                              const StepperConfig& cfg, bool presmooth = false) {
  const Grid& g = coef.grid();
  const int n = g.dim();
  if (y0 >= g.node_count()) throw std::invalid_argument("source node out of range");
  if (t_list.empty()) throw std::invalid_argument("kernel_column needs at least one time");
  const double t_min = 4.0 * g.spacing() * g.spacing() / params.nu();
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    if (t_list[i] < t_min) throw std::invalid_argument("kernel time below 4 h^2 / nu is unresolved");
    if (i > 0 && !(t_list[i] > t_list[i - 1])) throw std::invalid_argument("kernel times must increase");
  }
  std::vector<double> grid_t{0.0};
  grid_t.insert(grid_t.end(), t_list.begin(), t_list.end());

  std::vector<KernelSlice> out(t_list.size());
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    out[i].grid = g;
    out[i].source = y0;
    out[i].t = t_list[i];
    out[i].K = Field::matrix(g);
    out[i].rho_source = coef.rho.at(0, y0);
    out[i].b_source = coef.b.at(0, y0);
    out[i].t_smooth = presmooth ? 2.0 * g.spacing() * g.spacing() : 0.0;
  }
  LameEvolver ev(coef, params, cfg);
  for (int k = 0; k < n; ++k) {
    Field u0 = Field::vector(g);
    u0.at(k, y0) = 1.0 / g.cell_volume();
    if (presmooth) u0 = const_semigroup(u0, 2.0 * g.spacing() * g.spacing(), params);
    const Trajectory tr = ev.run(u0, grid_t);
    for (std::size_t i = 0; i < t_list.size(); ++i) {
      const Field& u = tr.states[i + 1];
      for (int r = 0; r < n; ++r) {
        auto src = u.component(r);
        auto dst = out[i].K.component(r * n + k);
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
  }
  return out;
}

/// max over entries of |int rho K_t(., y0) - rho(y0) I| / rho(y0).
inline double column_conservation_defect(const Coefficient& coef, const KernelSlice& s) {
  const int n = s.grid.dim();
  const auto m = integral(multiply(coef.rho, s.K));
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      const double target = (i == k && s.t_smooth == 0.0) ? s.rho_source : 0.0;
      if (s.t_smooth > 0.0 && i == k) continue;
      worst = std::max(worst, std::abs(m[i * n + k] - target) / s.rho_source);
    }
  }
  return worst;
}

struct ShellRow {
  double t = 0.0;
  double d = 0.0;          ///< distance at which the shell maximum sits
  double shell_max = 0.0;  ///< scaled magnitude, e.g. t^{n/2} |S_t|
  double model = 0.0;      ///< fitted envelope at d
};

struct GaussianFit {
  double C1 = 0.0;
  double c_dec = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double max_exceedance = 0.0;  ///< max over shells of shell_max / model - 1
  double near_cutoff = 0.0;     ///< 2 sqrt(t) at the smallest t
  double far_cutoff = 0.0;      ///< L/4
  double noise_floor = 0.0;     ///< relative floor below which shells are dropped
  std::size_t shells = 0;
  std::vector<ShellRow> table;

  double model(double d2_over_t) const { return C1 * std::exp(-d2_over_t / c_dec); }
};

namespace detail {

/// Bins a nonnegative node field by torus distance to the source in shells of
/// width h and returns (d at max, max) per nonempty shell.
inline std::vector<std::pair<double, double>> shell_maxima(const Field& mag, std::size_t source) {
  const Grid& g = mag.grid();
  const Point y = g.position(source);
  std::map<long, std::pair<double, double>> shells;
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const double d = g.distance(g.position(k), y);
    const long bin = std::lround(d / g.spacing());
    auto& s = shells[bin];
    const double v = mag.at(0, k);
    if (v > s.second || (s.second == 0.0 && s.first == 0.0)) s = {d, v};
  }
  std::vector<std::pair<double, double>> out;
  out.reserve(shells.size());
  for (const auto& [bin, s] : shells) out.push_back(s);
  return out;
}

inline GaussianFit fit_envelope(std::vector<ShellRow> rows, double near, double far, double floor) {
  GaussianFit fit;
  fit.near_cutoff = near;
  fit.far_cutoff = far;
  fit.noise_floor = floor;
  if (rows.size() < 10) throw std::invalid_argument("trust window holds fewer than 10 shells");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double x = r.d * r.d / r.t;
    const double y = std::log(r.shell_max);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / n;
  double ss_tot = 0, ss_res = 0;
  const double ybar = sy / n;
  for (const auto& r : rows) {
    const double x = r.d * r.d / r.t;
    const double y = std::log(r.shell_max);
    ss_tot += (y - ybar) * (y - ybar);
    ss_res += (y - icpt - slope * x) * (y - icpt - slope * x);
  }
  fit.slope = slope;
  fit.intercept = icpt;
  fit.C1 = std::exp(icpt);
  fit.c_dec = slope < 0.0 ? -1.0 / slope : std::numeric_limits<double>::infinity();
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.shells = rows.size();
  for (auto& r : rows) {
    r.model = std::exp(icpt + slope * r.d * r.d / r.t);
    fit.max_exceedance = std::max(fit.max_exceedance, r.shell_max / r.model - 1.0);
  }
  fit.table = std::move(rows);
  return fit;
}

/// Collects trust-window shells of a magnitude field scaled by t^power.
inline void collect_shells(std::vector<ShellRow>& rows, const Field& mag, std::size_t source,
                           double t, double scale, double floor) {
  const Grid& g = mag.grid();
  const double near = 2.0 * std::sqrt(t);
  const double far = 0.25 * g.extent();
  double peak = 0.0;
  for (double v : mag.component(0)) peak = std::max(peak, v);
  for (const auto& [d, v] : shell_maxima(mag, source)) {
    if (d < near || d > far) continue;
    if (v <= floor * peak) continue;
    rows.push_back({t, d, scale * v, 0.0});
  }
}

}  // namespace detail

/// Default relative floor: shells whose maximum is below this fraction of the
/// slice peak carry round-off rather than kernel and are left out of fits.
inline constexpr double kEnvelopeNoiseFloor = 1e-9;

/// Pointwise magnitude field of t^{n/2} |S_t| (spectral matrix norm).
inline Field kernel_magnitude(const KernelSlice& s) {
  const Field S = s.S();
  Field mag = Field::scalar(s.grid);
  for (std::size_t k = 0; k < s.grid.node_count(); ++k) mag.at(0, k) = matrix_norm_at(S, k);
  return mag;
}

/// Pointwise Frobenius magnitude of grad_x S_t over all entries.
inline Field kernel_gradient_magnitude(const KernelSlice& s) {
  const Field grad = gradient(s.S());
  Field mag = Field::scalar(s.grid);
  for (std::size_t k = 0; k < s.grid.node_count(); ++k) mag.at(0, k) = magnitude_at(grad, k);
  return mag;
}

/// Log-linear least-squares fit of shell maxima of t^{n/2}|S_t| against d^2/t
/// over the trust window [2 sqrt(t), L/4].
inline GaussianFit gaussian_fit(const std::vector<KernelSlice>& slices,
                                double floor = kEnvelopeNoiseFloor) {
  if (slices.empty()) throw std::invalid_argument("gaussian_fit needs slices");
  std::map<double, int> times;
  for (const auto& s : slices) times[s.t]++;
  if (times.size() < 3) throw std::invalid_argument("gaussian_fit needs at least 3 distinct times");
  std::vector<ShellRow> rows;
  const int n = slices.front().grid.dim();
  for (const auto& s : slices) {
    detail::collect_shells(rows, kernel_magnitude(s), s.source, s.t, std::pow(s.t, 0.5 * n), floor);
  }
  return detail::fit_envelope(std::move(rows), 2.0 * std::sqrt(times.begin()->first),
                              0.25 * slices.front().grid.extent(), floor);
}

/// Same pipeline for t^{(n+1)/2} |grad_x S_t|.
inline GaussianFit gradient_envelope(const std::vector<KernelSlice>& slices,
                                     double floor = kEnvelopeNoiseFloor) {
  if (slices.empty()) throw std::invalid_argument("gradient_envelope needs slices");
  std::map<double, int> times;
  for (const auto& s : slices) times[s.t]++;
  if (times.size() < 3) throw std::invalid_argument("gradient_envelope needs at least 3 distinct times");
  std::vector<ShellRow> rows;
  const int n = slices.front().grid.dim();
  for (const auto& s : slices) {
    detail::collect_shells(rows, kernel_gradient_magnitude(s), s.source, s.t,
                           std::pow(s.t, 0.5 * (n + 1)), floor);
  }
  return detail::fit_envelope(std::move(rows), 2.0 * std::sqrt(times.begin()->first),
                              0.25 * slices.front().grid.extent(), floor);
}

/// |S_t(x0, y0) - S_t(y0, x0)^T| / max |S_t|, where a has source y0 and b has
/// source x0.
inline double symmetry_defect(const KernelSlice& a, const KernelSlice& b) {
  if (a.t != b.t) throw std::invalid_argument("symmetry_defect needs slices at the same time");
  if (!(a.grid == b.grid)) throw std::invalid_argument("symmetry_defect needs slices on one grid");
  const int n = a.grid.dim();
  const Field Sa = a.S();
  const Field Sb = b.S();
  const std::size_t x0 = b.source;
  const std::size_t y0 = a.source;
  double diff = 0.0;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) diff = std::max(diff, std::abs(Sa.at(i * n + k, x0) - Sb.at(k * n + i, y0)));
  const double scale = std::max(max_abs(Sa), max_abs(Sb));
  return diff / scale;
}

struct HolderResult {
  Field quotient;
  double max_quotient = 0.0;
};

/// Weighted Hoelder quotient of grad_x S_t for the shift h (in grid steps):
/// |grad S(x+h) - grad S(x)| (sqrt t/|h|)^gamma t^{(n+1)/2} exp(|x-y0|^2/(c_ref t)),
/// evaluated inside the trust window [2 sqrt(t), L/4] and above the noise floor.
inline HolderResult holder_quotient(const KernelSlice& s, Index h_steps, double gamma, double c_ref,
                                    double floor = kEnvelopeNoiseFloor) {
  const Grid& g = s.grid;
  const int n = g.dim();
  double h2 = 0.0;
  for (int a = 0; a < n; ++a) h2 += double(h_steps[a]) * h_steps[a];
  const double hlen = std::sqrt(h2) * g.spacing();
  if (2.0 * hlen > std::sqrt(s.t)) throw std::invalid_argument("Hoelder shift violates 2|h| <= sqrt(t)");
  if (!(c_ref > 0.0)) throw std::invalid_argument("reference decay constant must be positive");
  HolderResult res;
  res.quotient = Field::scalar(g);
  if (hlen == 0.0) return res;
  const Field grad = gradient(s.S());
  const Field shifted = shift(grad, h_steps);
  Field mag = Field::scalar(g);
  for (std::size_t k = 0; k < g.node_count(); ++k) mag.at(0, k) = magnitude_at(grad, k);
  double peak = 0.0;
  for (double v : mag.component(0)) peak = std::max(peak, v);
  const Point y = g.position(s.source);
  const double near = 2.0 * std::sqrt(s.t);
  const double far = 0.25 * g.extent();
  const double pref = std::pow(std::sqrt(s.t) / hlen, gamma) * std::pow(s.t, 0.5 * (n + 1));
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const double d = g.distance(g.position(k), y);
    if (d < near || d > far) continue;
    if (mag.at(0, k) <= floor * peak) continue;
    double diff = 0.0;
    for (int c = 0; c < grad.components(); ++c) {
      const double v = shifted.at(c, k) - grad.at(c, k);
      diff += v * v;
    }
    const double q = std::sqrt(diff) * pref * std::exp(d * d / (c_ref * s.t));
    res.quotient.at(0, k) = q;
    res.max_quotient = std::max(res.max_quotient, q);
  }
  return res;
}

/// Exponential weight phi = exp(psi_alpha), psi_alpha(x) = sign * sin(alpha x_axis).
/// psi = sin satisfies |psi'| <= 1 and |psi''| <= 1; psi_alpha is periodic on
/// the torus only when alpha L / (2 pi) is an integer.
struct DaviesProbe {
  double alpha = 0.0;
  int axis = 0;
  double sign = 1.0;

  Field psi(const Grid& g) const {
    const double period = alpha * g.extent() / (2 * M_PI);
    if (std::abs(period - std::round(period)) > 1e-9) {
      throw std::invalid_argument("twist amplitude incompatible with the torus period");
    }
    if (axis < 0 || axis >= g.dim()) throw std::invalid_argument("twist axis out of range");
    return sample_scalar(g, [&](const Point& x) { return sign * std::sin(alpha * x[axis]); });
  }

  /// Checks |grad psi_alpha| <= alpha and |Hess psi_alpha| <= alpha^2 on the grid.
  void verify(const Grid& g) const {
    const Field p = psi(g);
    const double slack = 1e-9 * std::max(1.0, alpha * alpha);
    if (lp_norm(gradient(p), kInf) > alpha + slack) throw std::invalid_argument("twist gradient too large");
    if (lp_norm(gradient(gradient(p)), kInf) > alpha * alpha + slack) {
      throw std::invalid_argument("twist Hessian too large");
    }
  }

  Field phi(const Grid& g) const {
    Field p = psi(g);
    for (double& v : p.values()) v = std::exp(v);
    return p;
  }
};

struct DaviesCurve {
  double alpha = 0.0;
  std::vector<double> times;
  std::vector<double> g;  ///< log(||v(t)||_rho / ||u0||_rho)
  double growth_rate = 0.0;  ///< max over t of g(t)/t
};

struct DaviesReport {
  std::vector<DaviesCurve> curves;
  double C = 0.0;  ///< smallest C with g(t) <= C (1 + alpha^2 t) over the probes
  double C_rate = 0.0;  ///< smallest C with g(t) <= C alpha^2 t over alpha > 0
  bool contraction_at_zero = true;
};

/// Twisted flow v = phi^{-1} e^{t b L} (phi u0) for each twist amplitude.
inline DaviesReport davies_twisted_norm(const Coefficient& coef, const LameParams& params,
                                        const std::vector<DaviesProbe>& probes, const Field& u0,
                                        const std::vector<double>& t_list, const StepperConfig& cfg) {
  const Grid& g = coef.grid();
  DaviesReport rep;
  std::vector<double> grid_t{0.0};
  grid_t.insert(grid_t.end(), t_list.begin(), t_list.end());
  LameEvolver ev(coef, params, cfg);
  for (const auto& probe : probes) {
    probe.verify(g);
    const Field phi = probe.phi(g);
    Field phinv = phi;
    for (double& v : phinv.values()) v = 1.0 / v;
    const Trajectory tr = ev.run(multiply(phi, u0), grid_t);
    DaviesCurve c;
    c.alpha = probe.alpha;
    const double n0 = rho_norm(coef, u0);
    for (std::size_t i = 1; i < tr.states.size(); ++i) {
      const Field v = multiply(phinv, tr.states[i]);
      const double gi = std::log(rho_norm(coef, v) / n0);
      c.times.push_back(tr.times[i]);
      c.g.push_back(gi);
      c.growth_rate = std::max(c.growth_rate, gi / tr.times[i]);
      if (probe.alpha == 0.0 && gi > 1e-10) rep.contraction_at_zero = false;
      const double a2t = probe.alpha * probe.alpha * tr.times[i];
      rep.C = std::max(rep.C, gi / (1.0 + a2t));
      if (probe.alpha > 0.0) rep.C_rate = std::max(rep.C_rate, gi / a2t);
    }
    rep.curves.push_back(std::move(c));
  }
  return rep;
}

}  // namespace lamelab
