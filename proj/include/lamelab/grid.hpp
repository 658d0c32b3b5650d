#pragma once

// Periodic torus discretization [-L/2, L/2)^n and the real-valued field
// container shared by every module.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lamelab {

using Point = std::array<double, 3>;
using Index = std::array<int, 3>;

class Grid {
 public:
  Grid() = default;

  Grid(int dim, int points_per_axis, double extent)
      : dim_(dim), n_(points_per_axis), extent_(extent) {
    if (dim != 2 && dim != 3) {
      throw std::invalid_argument("grid dimension must be 2 or 3, got " + std::to_string(dim));
    }
    if (points_per_axis < 8 || (points_per_axis & (points_per_axis - 1)) != 0) {
      throw std::invalid_argument("points per axis must be a power of two >= 8, got " +
                                  std::to_string(points_per_axis));
    }
    if (!(extent > 0.0) || !std::isfinite(extent)) {
      throw std::invalid_argument("grid extent must be positive and finite");
    }
    nodes_ = 1;
    for (int a = 0; a < dim_; ++a) nodes_ *= static_cast<std::size_t>(n_);
  }

  int dim() const { return dim_; }
  int points() const { return n_; }
  double extent() const { return extent_; }
  double spacing() const { return extent_ / n_; }
  std::size_t node_count() const { return nodes_; }
  double cell_volume() const { return std::pow(spacing(), dim_); }
  double volume() const { return std::pow(extent_, dim_); }

  /// Number of complex modes in the real-to-complex layout: N^(n-1) * (N/2+1).
  std::size_t mode_count() const { return nodes_ / n_ * (n_ / 2 + 1); }

  Index index(std::size_t node) const {
    Index idx{0, 0, 0};
    for (int a = dim_ - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(node % n_);
      node /= n_;
    }
    return idx;
  }

  /// Flat node of a (possibly out-of-range) index, wrapped periodically.
  std::size_t node(Index idx) const {
    std::size_t flat = 0;
    for (int a = 0; a < dim_; ++a) {
      int i = idx[a] % n_;
      if (i < 0) i += n_;
      flat = flat * n_ + static_cast<std::size_t>(i);
    }
    return flat;
  }

  double coord(int i) const { return -0.5 * extent_ + i * spacing(); }

  Point position(std::size_t node) const {
    const Index idx = index(node);
    Point x{0.0, 0.0, 0.0};
    for (int a = 0; a < dim_; ++a) x[a] = coord(idx[a]);
    return x;
  }

  /// Minimum-image displacement x - y on the torus.
  Point displacement(const Point& x, const Point& y) const {
    Point d{0.0, 0.0, 0.0};
    for (int a = 0; a < dim_; ++a) {
      double v = x[a] - y[a];
      v -= extent_ * std::round(v / extent_);
      d[a] = v;
    }
    return d;
  }

  double distance(const Point& x, const Point& y) const {
    const Point d = displacement(x, y);
    double s = 0.0;
    for (int a = 0; a < dim_; ++a) s += d[a] * d[a];
    return std::sqrt(s);
  }

  double node_distance(std::size_t a, std::size_t b) const {
    return distance(position(a), position(b));
  }

  bool operator==(const Grid& o) const {
    return dim_ == o.dim_ && n_ == o.n_ && extent_ == o.extent_;
  }

 private:
  int dim_ = 2;
  int n_ = 8;
  double extent_ = 1.0;
  std::size_t nodes_ = 64;
};

inline Grid grid_new(int dim, int points_per_axis, double extent) {
  return Grid(dim, points_per_axis, extent);
}

/// Real samples on a grid, stored component-major: all nodes of component 0,
/// then component 1, ... Nodes are row-major with the last axis fastest.
/// One component is a scalar field, n a vector field, n*n a matrix field
/// (entry (i,j) is component i*n+j).
class Field {
 public:
  Field() = default;

  Field(const Grid& grid, int components, double value = 0.0)
      : grid_(grid), components_(components), data_(grid.node_count() * components, value) {
    if (components < 1) throw std::invalid_argument("field needs at least one component");
  }

  static Field scalar(const Grid& g, double v = 0.0) { return Field(g, 1, v); }
  static Field vector(const Grid& g, double v = 0.0) { return Field(g, g.dim(), v); }
  static Field matrix(const Grid& g, double v = 0.0) { return Field(g, g.dim() * g.dim(), v); }

  const Grid& grid() const { return grid_; }
  int components() const { return components_; }
  std::size_t nodes() const { return grid_.node_count(); }
  bool is_scalar() const { return components_ == 1; }
  bool is_vector() const { return components_ == grid_.dim(); }
  bool is_matrix() const { return components_ == grid_.dim() * grid_.dim(); }

  std::span<double> component(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * nodes(), nodes()};
  }
  std::span<const double> component(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * nodes(), nodes()};
  }
  double& at(int c, std::size_t node) { return data_[static_cast<std::size_t>(c) * nodes() + node]; }
  double at(int c, std::size_t node) const {
    return data_[static_cast<std::size_t>(c) * nodes() + node];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Field& o) const {
    return grid_ == o.grid_ && components_ == o.components_;
  }

  Field& operator+=(const Field& o) {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Field& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  /// this += a * x
  Field& axpy(double a, const Field& x) {
    check_shape(x);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
    return *this;
  }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(double s, Field a) { return a *= s; }

 private:
  void check_shape(const Field& o) const {
    if (!same_shape(o)) throw std::invalid_argument("field shape mismatch");
  }

  Grid grid_;
  int components_ = 1;
  std::vector<double> data_;
};

inline bool all_finite(const Field& u) {
  return std::all_of(u.values().begin(), u.values().end(),
                     [](double v) { return std::isfinite(v); });
}

inline void require_finite(const Field& u, const char* what) {
  if (!all_finite(u)) throw std::invalid_argument(std::string(what) + " contains NaN or Inf");
}

/// Samples f(x) at every node; f returns one value per component.
template <class F>
Field sample(const Grid& g, int components, F&& f) {
  Field u(g, components);
  std::vector<double> vals(components);
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    f(g.position(k), std::span<double>(vals));
    for (int c = 0; c < components; ++c) u.at(c, k) = vals[c];
  }
  return u;
}

template <class F>
Field sample_scalar(const Grid& g, F&& f) {
  Field u = Field::scalar(g);
  for (std::size_t k = 0; k < g.node_count(); ++k) u.at(0, k) = f(g.position(k));
  return u;
}

/// Pointwise Euclidean magnitude over components.
inline double magnitude_at(const Field& u, std::size_t node) {
  double s = 0.0;
  for (int c = 0; c < u.components(); ++c) s += u.at(c, node) * u.at(c, node);
  return std::sqrt(s);
}

inline double max_abs(const Field& u) {
  double m = 0.0;
  for (double v : u.values()) m = std::max(m, std::abs(v));
  return m;
}

/// Riemann-sum integral of each component.
inline std::vector<double> integral(const Field& u) {
  std::vector<double> out(u.components(), 0.0);
  const double dv = u.grid().cell_volume();
  for (int c = 0; c < u.components(); ++c) {
    double s = 0.0;
    for (double v : u.component(c)) s += v;
    out[c] = s * dv;
  }
  return out;
}

/// Nodewise product of a scalar field with every component of u.
inline Field multiply(const Field& scalar, const Field& u) {
  if (!scalar.is_scalar() || !(scalar.grid() == u.grid())) {
    throw std::invalid_argument("multiply expects a scalar field on the same grid");
  }
  Field out = u;
  const auto s = scalar.component(0);
  for (int c = 0; c < u.components(); ++c) {
    auto oc = out.component(c);
    for (std::size_t k = 0; k < oc.size(); ++k) oc[k] *= s[k];
  }
  return out;
}

/// Subtracts the mean of each component.
inline Field recenter(Field u) {
  for (int c = 0; c < u.components(); ++c) {
    auto uc = u.component(c);
    double s = 0.0;
    for (double v : uc) s += v;
    const double mean = s / static_cast<double>(uc.size());
    for (double& v : uc) v -= mean;
  }
  return u;
}

/// Shifts u by an integer number of grid steps: out(x) = u(x + shift*h).
inline Field shift(const Field& u, Index steps) {
  const Grid& g = u.grid();
  Field out(g, u.components());
  for (std::size_t k = 0; k < g.node_count(); ++k) {
    Index idx = g.index(k);
    for (int a = 0; a < g.dim(); ++a) idx[a] += steps[a];
    const std::size_t src = g.node(idx);
    for (int c = 0; c < u.components(); ++c) out.at(c, k) = u.at(c, src);
  }
  return out;
}

}  // namespace lamelab
