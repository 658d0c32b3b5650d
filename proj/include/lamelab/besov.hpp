#pragma once

// Littlewood-Paley blocks on the torus, homogeneous Besov norms and their
// heat-flow characterizations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "lamelab/field_ops.hpp"
#include "lamelab/spectral_ops.hpp"

namespace lamelab {

struct BesovIndex {
  double s = 0.0;
  double p = 2.0;
  double r = 1.0;
};

/// Smooth step on [0,1]: 0 at 0, 1 at 1, all derivatives vanish at both ends.
inline double smooth_step(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / x);
  const double b = std::exp(-1.0 / (1.0 - x));
  return a / (a + b);
}

/// Radial profile: 1 on [0,1], 0 on [2,inf).
inline double lp_profile(double r) { return 1.0 - smooth_step(r - 1.0); }

/// chi_j(r) = phi(r/2^j) - phi(r/2^(j-1)), supported in [2^(j-1), 2^(j+1)].
inline double lp_symbol(int j, double r) {
  return lp_profile(r / std::ldexp(1.0, j)) - lp_profile(r / std::ldexp(1.0, j - 1));
}

class DyadicPartition {
 public:
  explicit DyadicPartition(const Grid& g) : waves_(WaveTable::get(g)) {
    j_min_ = static_cast<int>(std::floor(std::log2(waves_->min_xi())));
    j_max_ = static_cast<int>(std::ceil(std::log2(waves_->max_xi())));
    const std::size_t m = waves_->modes();
    radius_.resize(m);
    for (std::size_t k = 0; k < m; ++k) radius_[k] = std::sqrt(waves_->xi2(k));
    table_.assign(static_cast<std::size_t>(blocks()) * m, 0.0);
    for (int j = j_min_; j <= j_max_; ++j) {
      double* row = &table_[static_cast<std::size_t>(j - j_min_) * m];
      for (std::size_t k = 0; k < m; ++k) row[k] = radius_[k] > 0.0 ? lp_symbol(j, radius_[k]) : 0.0;
    }
  }

  static std::shared_ptr<const DyadicPartition> get(const Grid& g) {
    static std::mutex mutex;
    static std::map<std::tuple<int, int, double>, std::shared_ptr<const DyadicPartition>> cache;
    std::lock_guard<std::mutex> lock(mutex);
    const auto key = std::make_tuple(g.dim(), g.points(), g.extent());
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto p = std::make_shared<const DyadicPartition>(g);
    cache.emplace(key, p);
    return p;
  }

  const Grid& grid() const { return waves_->grid(); }
  int j_min() const { return j_min_; }
  int j_max() const { return j_max_; }
  int blocks() const { return j_max_ - j_min_ + 1; }

  double chi(int j, std::size_t mode) const {
    return table_[static_cast<std::size_t>(j - j_min_) * waves_->modes() + mode];
  }

  void check(int j) const {
    if (j < j_min_ || j > j_max_) throw std::invalid_argument("dyadic block index out of range");
  }

  Spectrum block(const Spectrum& s, int j) const {
    check(j);
    Spectrum out = s;
    for (int c = 0; c < s.components; ++c) {
      auto oc = out.component(c);
      for (std::size_t m = 0; m < oc.size(); ++m) oc[m] *= chi(j, m);
    }
    return out;
  }

  /// Max over nonzero resolvable modes of |sum_j chi_j - 1|.
  double partition_defect() const {
    double worst = 0.0;
    for (std::size_t m = 0; m < waves_->modes(); ++m) {
      if (radius_[m] == 0.0) continue;
      double s = 0.0;
      for (int j = j_min_; j <= j_max_; ++j) s += chi(j, m);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

 private:
  std::shared_ptr<const WaveTable> waves_;
  int j_min_ = 0;
  int j_max_ = 0;
  std::vector<double> radius_;
  std::vector<double> table_;
};

inline Field dyadic_block(const Field& u, int j) {
  const auto part = DyadicPartition::get(u.grid());
  return inverse(part->block(forward(u), j));
}

/// Norm value with the share carried by the two boundary blocks.
struct BesovValue {
  double value = 0.0;
  double leakage = 0.0;
  bool flagged() const { return leakage > 0.01; }
};

namespace detail {

/// Riemann-sum L^2 norm straight from coefficients (Parseval).
inline double l2_from_spectrum(const Spectrum& s, const WaveTable& w) {
  double e = 0.0;
  for (int c = 0; c < s.components; ++c) {
    auto sc = s.component(c);
    for (std::size_t m = 0; m < sc.size(); ++m) e += w.weight(m) * std::norm(sc[m]);
  }
  const double N = static_cast<double>(s.grid.node_count());
  return std::sqrt(e * s.grid.cell_volume() / N);
}

inline double lp_of_spectrum(const Spectrum& s, double p, const WaveTable& w) {
  if (p == 2.0) return l2_from_spectrum(s, w);
  return lp_norm(inverse(s), p);
}

inline double lr_aggregate(const std::vector<double>& a, double r) {
  if (std::isinf(r)) return a.empty() ? 0.0 : *std::max_element(a.begin(), a.end());
  double s = 0.0;
  for (double v : a) s += std::pow(v, r);
  return std::pow(s, 1.0 / r);
}

inline double boundary_share(const std::vector<double>& a, double r) {
  if (a.empty()) return 0.0;
  const double e = std::isinf(r) ? 1.0 : r;
  double total = 0.0;
  for (double v : a) total += std::pow(v, e);
  if (total == 0.0) return 0.0;
  double edge = std::pow(a.front(), e);
  if (a.size() > 1) edge += std::pow(a.back(), e);
  return edge / total;
}

}  // namespace detail

/// Per-block weighted terms 2^{js} ||Delta_j u||_p for j = j_min..j_max.
inline std::vector<double> besov_terms(const Spectrum& s, const BesovIndex& idx) {
  const auto part = DyadicPartition::get(s.grid);
  const auto w = WaveTable::get(s.grid);
  std::vector<double> terms;
  terms.reserve(part->blocks());
  for (int j = part->j_min(); j <= part->j_max(); ++j) {
    terms.push_back(std::pow(2.0, j * idx.s) *
                    detail::lp_of_spectrum(part->block(s, j), idx.p, *w));
  }
  return terms;
}

inline BesovValue besov_norm(const Spectrum& s, const BesovIndex& idx) {
  if (!(idx.p >= 1.0) || !(idx.r >= 1.0)) throw std::invalid_argument("Besov index needs p, r >= 1");
  const auto terms = besov_terms(s, idx);
  return {detail::lr_aggregate(terms, idx.r), detail::boundary_share(terms, idx.r)};
}

inline BesovValue besov_norm(const Field& u, const BesovIndex& idx) {
  require_finite(u, "field");
  return besov_norm(forward(u), idx);
}

/// Smallest admissible power k in the heat characterization: k > s/2, k >= 0.
inline int heat_power(double s) { return s < 0.0 ? 0 : static_cast<int>(std::floor(s / 2.0)) + 1; }

/// Geometric time nodes t_i = t0 * 2^{i/2} spanning [t_lo, t_hi].
inline std::vector<double> geometric_nodes(double t_lo, double t_hi) {
  std::vector<double> t;
  const double ratio = std::sqrt(2.0);
  for (double v = t_lo; v <= t_hi * (1.0 + 1e-12); v *= ratio) t.push_back(v);
  return t;
}

/// Time window for the heat characterization of a generator on a grid: from
/// well below the finest resolvable scale to where the slowest mode has
/// decayed by e^{-40}.
inline std::pair<double, double> heat_window(const Grid& g, const Generator& gen) {
  const auto w = WaveTable::get(g);
  const double t_lo = g.spacing() * g.spacing() / (16.0 * generator_rate_max(gen));
  const double t_hi = 40.0 / (generator_rate_min(gen) * w->min_xi() * w->min_xi());
  return {t_lo, t_hi};
}

/// Heat-flow norm || t^{-s/2} ||(tG)^k e^{tG} u||_p ||_{L^q(dt/t)}, trapezoid
/// in log t on sqrt(2)-spaced nodes plus the analytic small-t tail, where the
/// integrand behaves like t^{k-s/2} ||G^k u||_p.
inline BesovValue heat_char_norm(const Field& u, double s, double p, double q, int k,
                                 const Generator& gen) {
  if (!(k >= 0) || !(k > s / 2.0)) throw std::invalid_argument("heat characterization needs k > s/2, k >= 0");
  if (!(p >= 1.0) || !(q >= 1.0)) throw std::invalid_argument("heat characterization needs p, q >= 1");
  if (std::holds_alternative<LameParams>(gen) && !u.is_vector()) {
    throw std::invalid_argument("the Lame generator acts on vector fields");
  }
  require_finite(u, "field");
  const Grid& g = u.grid();
  const auto w = WaveTable::get(g);
  Spectrum s0 = forward(u);
  for (int c = 0; c < s0.components; ++c) s0.at(c, 0) = 0.0;  // homogeneous: drop the mean

  Spectrum gk = s0;
  for (int i = 0; i < k; ++i) gk = generator_apply(std::move(gk), gen);

  const auto [t_lo, t_hi] = heat_window(g, gen);
  const auto nodes = geometric_nodes(t_lo, t_hi);
  std::vector<double> vals;
  vals.reserve(nodes.size());
  for (double t : nodes) {
    const Spectrum st = const_semigroup(gk, t, gen);
    vals.push_back(std::pow(t, k - s / 2.0) * detail::lp_of_spectrum(st, p, *w));
  }

  const BesovValue lp = besov_norm(s0, BesovIndex{s, p, q});
  if (std::isinf(q)) {
    return {*std::max_element(vals.begin(), vals.end()), lp.leakage};
  }
  const double dlog = 0.5 * std::log(2.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double wgt = (i == 0 || i + 1 == vals.size()) ? 0.5 : 1.0;
    acc += wgt * std::pow(vals[i], q);
  }
  acc *= dlog;
  const double e = q * (k - s / 2.0);
  const double c0 = detail::lp_of_spectrum(gk, p, *w);
  acc += std::pow(c0, q) * std::pow(t_lo, e) / e;
  return {std::pow(acc, 1.0 / q), lp.leakage};
}

/// Empirical lower estimate of the multiplier norm of rho on the Besov space.
inline double multiplier_ratio(const Field& rho, const BesovIndex& idx,
                               const std::vector<Field>& test_set) {
  if (test_set.empty()) throw std::invalid_argument("multiplier_ratio needs a nonempty test set");
  double best = 0.0;
  for (const Field& u : test_set) {
    const double den = besov_norm(u, idx).value;
    if (den == 0.0) throw std::invalid_argument("test field has zero Besov norm");
    best = std::max(best, besov_norm(multiply(rho, u), idx).value / den);
  }
  return best;
}

enum class ProductPairing {
  Critical,  ///< ||uv||_{n/p} / (||u||_{n/p} ||v||_{n/p})
  Mixed      ///< ||uv||_{n/p-1} / (||u||_{n/p-1} ||v||_{n/p})
};

/// Product-law ratio; v must be scalar, u scalar or vector.
inline double product_law_ratio(const Field& u, const Field& v, double p,
                                ProductPairing pairing = ProductPairing::Critical) {
  const double n = u.grid().dim();
  const double s_u = pairing == ProductPairing::Critical ? n / p : n / p - 1.0;
  const double s_v = n / p;
  const double nu = besov_norm(u, {s_u, p, 1.0}).value;
  const double nv = besov_norm(v, {s_v, p, 1.0}).value;
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("product_law_ratio needs nonzero inputs");
  const Field uv = recenter(multiply(v, u));
  return besov_norm(uv, {s_u, p, 1.0}).value / (nu * nv);
}

/// E_p-type solution norms: sup-in-time norm plus L^1-in-time norms of the
/// time derivative and of the operator applied to the solution.
struct SolutionNorms {
  double sup_norm = 0.0;
  double dt_l1 = 0.0;
  double op_l1 = 0.0;
  double total() const { return sup_norm + dt_l1 + op_l1; }
};

}  // namespace lamelab
