#pragma once

// FFTW-backed real transforms on the torus grid.  The forward transform is
// unnormalized; inverse() divides by N^n so inverse(forward(u)) == u.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include "lamelab/grid.hpp"

namespace lamelab {

using cplx = std::complex<double>;

/// Fourier coefficients in the real-to-complex layout: the last axis keeps
/// only k >= 0 (N/2+1 entries); missing modes follow from Hermitian symmetry.
struct Spectrum {
  Grid grid;
  int components = 1;
  std::vector<cplx> data;

  Spectrum() = default;
  Spectrum(const Grid& g, int comps) : grid(g), components(comps), data(g.mode_count() * comps) {}

  std::size_t modes() const { return grid.mode_count(); }
  std::span<cplx> component(int c) { return {data.data() + c * modes(), modes()}; }
  std::span<const cplx> component(int c) const { return {data.data() + c * modes(), modes()}; }
  cplx& at(int c, std::size_t m) { return data[c * modes() + m]; }
  cplx at(int c, std::size_t m) const { return data[c * modes() + m]; }
};

namespace detail {

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan forward(const Grid& g) { return get(g, true); }
  fftw_plan backward(const Grid& g) { return get(g, false); }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  fftw_plan get(const Grid& g, bool fwd) {
    const auto key = std::make_tuple(g.dim(), g.points(), fwd);
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    int dims[3] = {g.points(), g.points(), g.points()};
    double* r = fftw_alloc_real(g.node_count());
    fftw_complex* c = fftw_alloc_complex(g.mode_count());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan p = fwd ? fftw_plan_dft_r2c(g.dim(), dims, r, c, flags)
                      : fftw_plan_dft_c2r(g.dim(), dims, c, r, flags);
    fftw_free(r);
    fftw_free(c);
    plans_.emplace(key, p);
    return p;
  }

  std::mutex mutex_;
  std::map<std::tuple<int, int, bool>, fftw_plan> plans_;
};

}  // namespace detail

inline Spectrum forward(const Field& u) {
  const Grid& g = u.grid();
  Spectrum s(g, u.components());
  fftw_plan p = detail::PlanCache::instance().forward(g);
  std::vector<double> buf(g.node_count());
  for (int c = 0; c < u.components(); ++c) {
    auto uc = u.component(c);
    std::copy(uc.begin(), uc.end(), buf.begin());
    fftw_execute_dft_r2c(p, buf.data(), reinterpret_cast<fftw_complex*>(s.component(c).data()));
  }
  return s;
}

inline Field inverse(const Spectrum& s) {
  const Grid& g = s.grid;
  Field u(g, s.components);
  fftw_plan p = detail::PlanCache::instance().backward(g);
  std::vector<cplx> buf(g.mode_count());
  const double scale = 1.0 / static_cast<double>(g.node_count());
  for (int c = 0; c < s.components; ++c) {
    auto sc = s.component(c);
    std::copy(sc.begin(), sc.end(), buf.begin());  // c2r destroys its input
    auto uc = u.component(c);
    fftw_execute_dft_c2r(p, reinterpret_cast<fftw_complex*>(buf.data()), uc.data());
    for (double& v : uc) v *= scale;
  }
  return u;
}

inline Field dft_roundtrip(const Field& u) {
  require_finite(u, "field");
  return inverse(forward(u));
}

/// Per-mode physical wavenumbers of a grid, shared between callers.
/// xi holds 2*pi*k/L with k in [-N/2, N/2); xi_odd zeroes the Nyquist
/// component, which is what odd-order derivatives must use to stay real.
/// weight is the Hermitian multiplicity (1 or 2) of the stored mode.
class WaveTable {
 public:
  explicit WaveTable(const Grid& g) : grid_(g) {
    const std::size_t m = g.mode_count();
    const int n = g.dim();
    const int N = g.points();
    const int last = N / 2 + 1;
    xi_.assign(m * n, 0.0);
    xi_odd_.assign(m * n, 0.0);
    k_.assign(m * n, 0);
    xi2_.assign(m, 0.0);
    weight_.assign(m, 2.0);
    const double base = 2.0 * M_PI / g.extent();
    for (std::size_t mode = 0; mode < m; ++mode) {
      std::size_t rest = mode;
      int idx[3] = {0, 0, 0};
      idx[n - 1] = static_cast<int>(rest % last);
      rest /= last;
      for (int a = n - 2; a >= 0; --a) {
        idx[a] = static_cast<int>(rest % N);
        rest /= N;
      }
      double s2 = 0.0;
      for (int a = 0; a < n; ++a) {
        const int k = idx[a] < N / 2 ? idx[a] : idx[a] - N;
        const double x = base * k;
        k_[mode * n + a] = k;
        xi_[mode * n + a] = x;
        xi_odd_[mode * n + a] = (idx[a] == N / 2) ? 0.0 : x;
        s2 += x * x;
      }
      xi2_[mode] = s2;
      if (idx[n - 1] == 0 || idx[n - 1] == N / 2) weight_[mode] = 1.0;
    }
  }

  static std::shared_ptr<const WaveTable> get(const Grid& g) {
    static std::mutex mutex;
    static std::map<std::tuple<int, int, double>, std::shared_ptr<const WaveTable>> cache;
    std::lock_guard<std::mutex> lock(mutex);
    const auto key = std::make_tuple(g.dim(), g.points(), g.extent());
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto t = std::make_shared<const WaveTable>(g);
    cache.emplace(key, t);
    return t;
  }

  const Grid& grid() const { return grid_; }
  std::size_t modes() const { return xi2_.size(); }
  double xi(std::size_t mode, int axis) const { return xi_[mode * grid_.dim() + axis]; }
  double xi_odd(std::size_t mode, int axis) const { return xi_odd_[mode * grid_.dim() + axis]; }
  int k(std::size_t mode, int axis) const { return k_[mode * grid_.dim() + axis]; }
  double xi2(std::size_t mode) const { return xi2_[mode]; }
  double weight(std::size_t mode) const { return weight_[mode]; }
  double max_xi() const {
    double m = 0.0;
    for (double v : xi2_) m = std::max(m, v);
    return std::sqrt(m);
  }
  double min_xi() const { return 2.0 * M_PI / grid_.extent(); }

 private:
  Grid grid_;
  std::vector<double> xi_;
  std::vector<double> xi_odd_;
  std::vector<int> k_;
  std::vector<double> xi2_;
  std::vector<double> weight_;
};

/// Sum over all modes of |c_k|^2 using Hermitian multiplicities; equals
/// N^n * sum over nodes of u^2 for the component.
inline double spectral_energy(const Spectrum& s, int c) {
  const auto w = WaveTable::get(s.grid);
  double e = 0.0;
  auto sc = s.component(c);
  for (std::size_t m = 0; m < sc.size(); ++m) e += w->weight(m) * std::norm(sc[m]);
  return e;
}

}  // namespace lamelab
