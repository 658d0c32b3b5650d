#pragma once

// Constant-coefficient Lamé operator, Hodge projectors and exact semigroups,
// all applied mode by mode.

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>

#include "lamelab/fft.hpp"
#include "lamelab/field_ops.hpp"

namespace lamelab {

struct LameParams {
  double mu = 1.0;
  double lambda = 0.0;

  double nu() const { return lambda + 2.0 * mu; }

  void validate() const {
    if (!(mu > 0.0) || !(nu() > 0.0) || !std::isfinite(lambda)) {
      throw std::invalid_argument("Lame parameters need mu > 0 and lambda + 2 mu > 0");
    }
  }
};

using Mat3 = double[3][3];

/// Applies a real symmetric per-mode matrix to a vector spectrum in place.
/// fill(mode, M) writes the n x n block into M.
template <class F>
void apply_mode_matrix(Spectrum& s, F&& fill) {
  const int n = s.grid.dim();
  if (s.components != n) throw std::invalid_argument("expected a vector spectrum");
  const std::size_t modes = s.modes();
  Mat3 M;
  cplx v[3];
  for (std::size_t m = 0; m < modes; ++m) {
    fill(m, M);
    for (int i = 0; i < n; ++i) v[i] = s.at(i, m);
    for (int i = 0; i < n; ++i) {
      cplx acc = 0.0;
      for (int j = 0; j < n; ++j) acc += M[i][j] * v[j];
      s.at(i, m) = acc;
    }
  }
}

/// Hodge projector symbols.  The longitudinal direction is built from the
/// Nyquist-free wavenumber so the projection maps real fields to real fields;
/// Q(0) = 0, and modes with only Nyquist components are treated as
/// transverse.
class HodgeSymbol {
 public:
  explicit HodgeSymbol(const Grid& g) : waves_(WaveTable::get(g)) {}

  const Grid& grid() const { return waves_->grid(); }

  void q(std::size_t mode, Mat3 M) const {
    const int n = grid().dim();
    double e[3] = {0, 0, 0};
    double e2 = 0.0;
    for (int a = 0; a < n; ++a) {
      e[a] = waves_->xi_odd(mode, a);
      e2 += e[a] * e[a];
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) M[i][j] = e2 > 0.0 ? e[i] * e[j] / e2 : 0.0;
    }
  }

  void p(std::size_t mode, Mat3 M) const {
    q(mode, M);
    const int n = grid().dim();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) M[i][j] = (i == j ? 1.0 : 0.0) - M[i][j];
    }
  }

 private:
  std::shared_ptr<const WaveTable> waves_;
};

enum class Projector { P, Q };

inline Field hodge_project(const Field& u, Projector which) {
  if (!u.is_vector()) throw std::invalid_argument("hodge_project expects a vector field");
  const HodgeSymbol h(u.grid());
  Spectrum s = forward(u);
  apply_mode_matrix(s, [&](std::size_t m, Mat3 M) {
    if (which == Projector::P) {
      h.p(m, M);
    } else {
      h.q(m, M);
    }
  });
  return inverse(s);
}

enum class OperatorKind { Spectral, FiniteDifference };

inline std::string to_string(OperatorKind k) {
  return k == OperatorKind::Spectral ? "spectral" : "finite-difference";
}

/// Fourier symbol of L = mu Lap + (lambda+mu) grad div.  The finite-difference
/// variant is the symbol of the second-order nodal stencil (3-point second
/// differences on the diagonal, products of centered differences off it).
class LameSymbol {
 public:
  LameSymbol(const Grid& g, LameParams p, OperatorKind kind = OperatorKind::Spectral)
      : waves_(WaveTable::get(g)), params_(p), kind_(kind) {
    p.validate();
  }

  const Grid& grid() const { return waves_->grid(); }
  const LameParams& params() const { return params_; }
  OperatorKind kind() const { return kind_; }

  void matrix(std::size_t mode, Mat3 M) const {
    const int n = grid().dim();
    const double mu = params_.mu;
    const double lm = params_.lambda + params_.mu;
    if (kind_ == OperatorKind::Spectral) {
      double e[3] = {0, 0, 0};
      for (int a = 0; a < n; ++a) e[a] = waves_->xi_odd(mode, a);
      const double x2 = waves_->xi2(mode);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) M[i][j] = -lm * e[i] * e[j] - (i == j ? mu * x2 : 0.0);
      }
      return;
    }
    const double h = grid().spacing();
    double s[3] = {0, 0, 0};
    double c[3] = {0, 0, 0};
    double s2 = 0.0;
    for (int a = 0; a < n; ++a) {
      const double x = waves_->xi(mode, a);
      s[a] = 2.0 / h * std::sin(0.5 * x * h);
      c[a] = std::sin(x * h) / h;
      s2 += s[a] * s[a];
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        M[i][j] = i == j ? -mu * s2 - lm * s[i] * s[i] : -lm * c[i] * c[j];
      }
    }
  }

  /// Largest |eigenvalue| bound of the symbol over all modes.
  double spectral_radius() const {
    const double h = grid().spacing();
    const int n = grid().dim();
    if (kind_ == OperatorKind::Spectral) return params_.nu() * waves_->max_xi() * waves_->max_xi();
    return (params_.mu + std::abs(params_.lambda + params_.mu)) * n * 4.0 / (h * h);
  }

 private:
  std::shared_ptr<const WaveTable> waves_;
  LameParams params_;
  OperatorKind kind_;
};

inline Spectrum lame_apply(Spectrum s, const LameSymbol& sym) {
  apply_mode_matrix(s, [&](std::size_t m, Mat3 M) { sym.matrix(m, M); });
  return s;
}

inline Field lame_apply(const Field& u, const LameParams& params,
                        OperatorKind kind = OperatorKind::Spectral) {
  if (!u.is_vector()) throw std::invalid_argument("lame_apply expects a vector field");
  const LameSymbol sym(u.grid(), params, kind);
  return inverse(lame_apply(forward(u), sym));
}

/// Generator c*Lap applied componentwise.
struct ScaledLaplacian {
  double c = 1.0;
};

using Generator = std::variant<ScaledLaplacian, LameParams>;

/// Per-mode heat-flow multiplier of the generator at time t (decaying).
inline void semigroup_matrix(const Generator& gen, const HodgeSymbol& hodge, const WaveTable& w,
                             std::size_t mode, double t, Mat3 M) {
  const int n = w.grid().dim();
  const double x2 = w.xi2(mode);
  if (const auto* lap = std::get_if<ScaledLaplacian>(&gen)) {
    const double f = std::exp(-lap->c * t * x2);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) M[i][j] = i == j ? f : 0.0;
    }
    return;
  }
  const auto& p = std::get<LameParams>(gen);
  const double fp = std::exp(-p.mu * t * x2);
  const double fq = std::exp(-p.nu() * t * x2);
  Mat3 Q;
  hodge.q(mode, Q);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) M[i][j] = fp * ((i == j ? 1.0 : 0.0) - Q[i][j]) + fq * Q[i][j];
  }
}

/// Exact semigroup e^{tG} of the constant-coefficient generator on spectra.
inline Spectrum const_semigroup(Spectrum s, double t, const Generator& gen) {
  if (!(t >= 0.0)) throw std::invalid_argument("semigroup time must be nonnegative");
  const auto w = WaveTable::get(s.grid);
  if (std::holds_alternative<ScaledLaplacian>(gen)) {
    const double c = std::get<ScaledLaplacian>(gen).c;
    for (int k = 0; k < s.components; ++k) {
      auto sc = s.component(k);
      for (std::size_t m = 0; m < sc.size(); ++m) sc[m] *= std::exp(-c * t * w->xi2(m));
    }
    return s;
  }
  std::get<LameParams>(gen).validate();
  const HodgeSymbol hodge(s.grid);
  apply_mode_matrix(s, [&](std::size_t m, Mat3 M) { semigroup_matrix(gen, hodge, *w, m, t, M); });
  return s;
}

inline Field const_semigroup(const Field& u, double t, const Generator& gen) {
  if (std::holds_alternative<LameParams>(gen) && !u.is_vector()) {
    throw std::invalid_argument("the Lame semigroup acts on vector fields");
  }
  if (!(t >= 0.0)) throw std::invalid_argument("semigroup time must be nonnegative");
  return inverse(const_semigroup(forward(u), t, gen));
}

/// Applies the generator itself (c Lap or the spectral Lame operator).
inline Spectrum generator_apply(Spectrum s, const Generator& gen) {
  if (const auto* lap = std::get_if<ScaledLaplacian>(&gen)) {
    const auto w = WaveTable::get(s.grid);
    for (int k = 0; k < s.components; ++k) {
      auto sc = s.component(k);
      for (std::size_t m = 0; m < sc.size(); ++m) sc[m] *= -lap->c * w->xi2(m);
    }
    return s;
  }
  const LameSymbol sym(s.grid, std::get<LameParams>(gen));
  return lame_apply(std::move(s), sym);
}

/// Slowest and fastest diffusion rates of a generator.
inline double generator_rate_min(const Generator& g) {
  if (const auto* lap = std::get_if<ScaledLaplacian>(&g)) return lap->c;
  const auto& p = std::get<LameParams>(g);
  return std::min(p.mu, p.nu());
}

inline double generator_rate_max(const Generator& g) {
  if (const auto* lap = std::get_if<ScaledLaplacian>(&g)) return lap->c;
  const auto& p = std::get<LameParams>(g);
  return std::max(p.mu, p.nu());
}

}  // namespace lamelab
