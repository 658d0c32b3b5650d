#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

#include "lamelab/fft.hpp"
#include "lamelab/grid.hpp"

namespace lamelab {

/// Exact derivative of the trigonometric interpolant along one axis.
inline Spectrum derivative(const Spectrum& s, int axis, int order) {
  const auto w = WaveTable::get(s.grid);
  Spectrum out = s;
  for (int c = 0; c < s.components; ++c) {
    auto oc = out.component(c);
    for (std::size_t m = 0; m < oc.size(); ++m) {
      if (order == 1) {
        oc[m] *= cplx(0.0, w->xi_odd(m, axis));
      } else {
        const double x = w->xi(m, axis);
        oc[m] *= -x * x;
      }
    }
  }
  return out;
}

inline Field spectral_derivative(const Field& u, int axis, int order) {
  if (order != 1 && order != 2) throw std::invalid_argument("derivative order must be 1 or 2");
  if (axis < 0 || axis >= u.grid().dim()) throw std::invalid_argument("derivative axis out of range");
  require_finite(u, "field");
  return inverse(derivative(forward(u), axis, order));
}

/// Gradient of each component: output component c*n + j is d_j u_c.
/// For a vector field this is the Jacobian with (Du)_{ij} = d_j u_i.
inline Field gradient(const Field& u) {
  const Grid& g = u.grid();
  const int n = g.dim();
  const Spectrum s = forward(u);
  Field out(g, u.components() * n);
  for (int j = 0; j < n; ++j) {
    const Field d = inverse(derivative(s, j, 1));
    for (int c = 0; c < u.components(); ++c) {
      auto src = d.component(c);
      auto dst = out.component(c * n + j);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return out;
}

inline Field jacobian(const Field& u) { return gradient(u); }

/// Divergence of a vector field, or row-wise divergence of a matrix field
/// ((div W)_i = sum_j d_j W_ij).
inline Field divergence(const Field& u) {
  const Grid& g = u.grid();
  const int n = g.dim();
  int rows = 0;
  if (u.is_vector()) {
    rows = 1;
  } else if (u.is_matrix()) {
    rows = n;
  } else {
    throw std::invalid_argument("divergence expects a vector or matrix field");
  }
  const Spectrum s = forward(u);
  const auto w = WaveTable::get(g);
  Spectrum acc(g, rows);
  for (int i = 0; i < rows; ++i) {
    auto ac = acc.component(i);
    for (int j = 0; j < n; ++j) {
      auto sc = s.component(i * n + j);
      for (std::size_t m = 0; m < ac.size(); ++m) ac[m] += cplx(0.0, w->xi_odd(m, j)) * sc[m];
    }
  }
  return inverse(acc);
}

inline Field laplacian(const Field& u) {
  Spectrum s = forward(u);
  const auto w = WaveTable::get(u.grid());
  for (int c = 0; c < s.components; ++c) {
    auto sc = s.component(c);
    for (std::size_t m = 0; m < sc.size(); ++m) sc[m] *= -w->xi2(m);
  }
  return inverse(s);
}

/// Riemann-sum L^p norm of the pointwise Euclidean magnitude.
inline double lp_norm(const Field& u, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("lp_norm requires p >= 1");
  const std::size_t nodes = u.nodes();
  if (std::isinf(p)) {
    double m = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) m = std::max(m, magnitude_at(u, k));
    return m;
  }
  double s = 0.0;
  for (std::size_t k = 0; k < nodes; ++k) {
    const double a = magnitude_at(u, k);
    s += (p == 2.0) ? a * a : std::pow(a, p);
  }
  s *= u.grid().cell_volume();
  return p == 2.0 ? std::sqrt(s) : std::pow(s, 1.0 / p);
}

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// L^2 inner product sum_c int u_c v_c.
inline double inner(const Field& u, const Field& v) {
  double s = 0.0;
  auto a = u.values();
  auto b = v.values();
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s * u.grid().cell_volume();
}

/// Weighted inner product int w sum_c u_c v_c with a scalar weight.
inline double weighted_inner(const Field& w, const Field& u, const Field& v) {
  const auto wc = w.component(0);
  double s = 0.0;
  for (int c = 0; c < u.components(); ++c) {
    auto a = u.component(c);
    auto b = v.component(c);
    for (std::size_t k = 0; k < a.size(); ++k) s += wc[k] * a[k] * b[k];
  }
  return s * u.grid().cell_volume();
}

/// Random real field with Fourier support in k_min <= |k| <= k_max (integer
/// wavenumbers), Gaussian coefficients with amplitude |k|^(-decay), scaled to
/// unit RMS per component.  Coefficients are drawn per wavevector in a fixed
/// order, so the same seed gives the same function on every grid that
/// resolves the band (Nyquist modes are left out).
inline Field random_field(const Grid& g, int components, std::uint64_t seed, double k_min = 1.0,
                          double k_max = 6.0, double decay = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Spectrum s(g, components);
  const int n = g.dim();
  const int N = g.points();
  const int K = static_cast<int>(std::ceil(k_max));
  const std::size_t half = static_cast<std::size_t>(N / 2 + 1);
  auto mode_of = [&](const std::array<int, 3>& k) {
    std::size_t m = 0;
    for (int a = 0; a + 1 < n; ++a) m = m * N + static_cast<std::size_t>((k[a] % N + N) % N);
    return m * half + static_cast<std::size_t>(k[n - 1]);
  };
  for (int c = 0; c < components; ++c) {
    auto sc = s.component(c);
    std::array<int, 3> k{-K, -K, n == 3 ? -K : 0};
    while (true) {
      const double re = normal(rng);
      const double im = normal(rng);
      double k2 = 0.0;
      bool resolved = true;
      for (int a = 0; a < n; ++a) {
        k2 += double(k[a]) * k[a];
        if (2 * std::abs(k[a]) >= N) resolved = false;
      }
      const double kk = std::sqrt(k2);
      // Keep the stored half of the spectrum: last component positive, or zero
      // with the leading components lexicographically positive.
      int lead = 0;
      for (int a = 0; a + 1 < n && lead == 0; ++a) lead = (k[a] > 0) - (k[a] < 0);
      const int last = k[n - 1];
      const bool stored = last > 0 || (last == 0 && lead > 0);
      if (resolved && stored && kk >= k_min && kk <= k_max && kk > 0.0) {
        const cplx v = std::pow(kk, -decay) * cplx(re, im);
        sc[mode_of(k)] = v;
        if (last == 0) {
          std::array<int, 3> mk{-k[0], -k[1], -k[2]};
          sc[mode_of(mk)] = std::conj(v);
        }
      }
      int a = n - 1;
      while (a >= 0 && k[a] == K) k[a--] = -K;
      if (a < 0) break;
      ++k[a];
    }
  }
  Field u = inverse(s);
  for (int c = 0; c < components; ++c) {
    auto uc = u.component(c);
    double e = 0.0;
    for (double v : uc) e += v * v;
    const double rms = std::sqrt(e / uc.size());
    if (rms > 0.0) {
      for (double& v : uc) v /= rms;
    }
  }
  return u;
}

}  // namespace lamelab
