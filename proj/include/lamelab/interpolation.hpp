#pragma once

// Periodic tensor-product cubic B-spline interpolation. Coefficients come from
// an FFT prefilter, so the interpolant is C^2 and fourth-order accurate.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>

#include "lamelab/fft.hpp"
#include "lamelab/grid.hpp"

namespace lamelab {

namespace detail {

/// B-spline weights of the nodes -1, 0, 1, 2 for a fractional offset s in [0, 1).
inline std::array<double, 4> bspline_weights(double s) {
  const double t = 1.0 - s;
  const double s2 = s * s, s3 = s2 * s;
  return {t * t * t / 6.0, (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0, (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
          s3 / 6.0};
}

}  // namespace detail

class CubicInterpolant {
 public:
  explicit CubicInterpolant(const Field& u) {
    const Grid& g = u.grid();
    Spectrum s = forward(u);
    const auto w = WaveTable::get(g);
    const double h = g.spacing();
    for (int c = 0; c < s.components; ++c) {
      auto sc = s.component(c);
      for (std::size_t m = 0; m < sc.size(); ++m) {
        double sym = 1.0;
        for (int a = 0; a < g.dim(); ++a) sym *= (4.0 + 2.0 * std::cos(w->xi(m, a) * h)) / 6.0;
        sc[m] /= sym;
      }
    }
    coef_ = inverse(s);
  }

  const Grid& grid() const { return coef_.grid(); }
  int components() const { return coef_.components(); }

  /// Writes u(x) for every component into out; x is wrapped onto the torus.
  void operator()(const Point& x, std::span<double> out) const {
    const Grid& g = coef_.grid();
    const int n = g.dim();
    const int N = g.points();
    const double h = g.spacing();
    const int nc = coef_.components();
    std::array<int, 3> base{0, 0, 0};
    std::array<std::array<double, 4>, 3> w{};
    for (int a = 0; a < n; ++a) {
      const double r = (x[a] + 0.5 * g.extent()) / h;
      const double fl = std::floor(r);
      base[a] = static_cast<int>(fl);
      w[a] = detail::bspline_weights(r - fl);
    }
    for (int c = 0; c < nc; ++c) out[c] = 0.0;
    auto wrap = [N](int i) {
      i %= N;
      return i < 0 ? i + N : i;
    };
    if (n == 2) {
      for (int i = 0; i < 4; ++i) {
        const std::size_t row = static_cast<std::size_t>(wrap(base[0] + i - 1)) * N;
        for (int j = 0; j < 4; ++j) {
          const double wij = w[0][i] * w[1][j];
          const std::size_t k = row + static_cast<std::size_t>(wrap(base[1] + j - 1));
          for (int c = 0; c < nc; ++c) out[c] += wij * coef_.at(c, k);
        }
      }
      return;
    }
    for (int i = 0; i < 4; ++i) {
      const std::size_t p = static_cast<std::size_t>(wrap(base[0] + i - 1));
      for (int j = 0; j < 4; ++j) {
        const std::size_t q = p * N + static_cast<std::size_t>(wrap(base[1] + j - 1));
        const double wij = w[0][i] * w[1][j];
        for (int l = 0; l < 4; ++l) {
          const double wijl = wij * w[2][l];
          const std::size_t k = q * N + static_cast<std::size_t>(wrap(base[2] + l - 1));
          for (int c = 0; c < nc; ++c) out[c] += wijl * coef_.at(c, k);
        }
      }
    }
  }

  /// Values at node -> positions(node); positions holds absolute coordinates.
  Field compose(const Field& positions) const {
    const Grid& g = coef_.grid();
    if (!positions.is_vector() || !(positions.grid() == g)) {
      throw std::invalid_argument("compose expects a position vector field on the same grid");
    }
    Field out(g, coef_.components());
    std::array<double, 9> vals{};
    const std::span<double> view(vals.data(), static_cast<std::size_t>(coef_.components()));
    for (std::size_t k = 0; k < g.node_count(); ++k) {
      Point x{0.0, 0.0, 0.0};
      for (int a = 0; a < g.dim(); ++a) x[a] = positions.at(a, k);
      (*this)(x, view);
      for (int c = 0; c < coef_.components(); ++c) out.at(c, k) = vals[c];
    }
    return out;
  }

 private:
  Field coef_;
};

/// u composed with the map node -> positions(node).
inline Field compose(const Field& u, const Field& positions) { return CubicInterpolant(u).compose(positions); }

/// Node positions y + d(y) for a displacement field d.
inline Field displaced_positions(const Field& d) {
  const Grid& g = d.grid();
  Field x = d;
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    const Point y = g.position(k);
    for (int a = 0; a < g.dim(); ++a) x.at(a, k) += y[a];
  }
  return x;
}

}  // namespace lamelab
