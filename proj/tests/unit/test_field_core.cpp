#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>

#include "lamelab/field_ops.hpp"
#include "lamelab/io.hpp"

using namespace lamelab;
using Catch::Approx;

namespace {

double rel_max_diff(const Field& a, const Field& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    num = std::max(num, std::abs(a.values()[i] - b.values()[i]));
    den = std::max(den, std::abs(b.values()[i]));
  }
  return den > 0.0 ? num / den : num;
}

Field white_noise(const Grid& g, int comps, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Field u(g, comps);
  for (double& v : u.values()) v = d(rng);
  return u;
}

// Second-order centered difference along one axis.
Field centered_difference(const Field& u, int axis) {
  Index plus{0, 0, 0};
  Index minus{0, 0, 0};
  plus[axis] = 1;
  minus[axis] = -1;
  Field out = shift(u, plus) - shift(u, minus);
  out *= 0.5 / u.grid().spacing();
  return out;
}

}  // namespace

TEST_CASE("grid construction validates its arguments", "[grid]") {
  const Grid g2 = grid_new(2, 64, 16.0);
  CHECK(g2.spacing() == 0.25);
  CHECK(g2.node_count() == 4096);
  const Grid g3 = grid_new(3, 16, 8.0);
  CHECK(g3.spacing() == 0.5);
  CHECK(g3.mode_count() == 16 * 16 * 9);

  CHECK_THROWS_AS(grid_new(2, 12, 8.0), std::invalid_argument);
  CHECK_THROWS_AS(grid_new(2, 4, 8.0), std::invalid_argument);
  CHECK_THROWS_AS(grid_new(1, 16, 8.0), std::invalid_argument);
  CHECK_THROWS_AS(grid_new(4, 16, 8.0), std::invalid_argument);
  CHECK_THROWS_AS(grid_new(2, 16, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(grid_new(2, 16, -1.0), std::invalid_argument);
}

TEST_CASE("node indexing and torus distance", "[grid]") {
  const Grid g(2, 16, 8.0);
  for (std::size_t k : {0ul, 17ul, 255ul}) CHECK(g.node(g.index(k)) == k);
  CHECK(g.position(0)[0] == -4.0);
  CHECK(g.node({-1, 0, 0}) == g.node({15, 0, 0}));
  // Minimum image: opposite edges are one cell apart.
  CHECK(g.node_distance(g.node({0, 0, 0}), g.node({15, 0, 0})) == Approx(0.5));
  CHECK(g.node_distance(g.node({0, 0, 0}), g.node({8, 8, 0})) == Approx(std::sqrt(32.0)));
}

TEST_CASE("field shapes and arithmetic", "[field]") {
  const Grid g(3, 8, 1.0);
  const Field s = Field::scalar(g, 2.0);
  const Field v = Field::vector(g, 1.0);
  const Field m = Field::matrix(g);
  CHECK(s.values().size() == 512);
  CHECK(v.values().size() == 3 * 512);
  CHECK(m.values().size() == 9 * 512);
  CHECK(m.is_matrix());
  const Field w = multiply(s, v);
  CHECK(w.at(2, 100) == 2.0);
  CHECK_THROWS_AS(Field::scalar(g) + Field::vector(g), std::invalid_argument);

  Field bad = Field::scalar(g);
  bad.at(0, 3) = std::nan("");
  CHECK_FALSE(all_finite(bad));
  CHECK_THROWS_AS(dft_roundtrip(bad), std::invalid_argument);
}

TEST_CASE("transform roundtrip", "[fft]") {
  const Grid g(2, 32, 16.0);
  const Field one = Field::scalar(g, 1.0);
  CHECK(rel_max_diff(dft_roundtrip(one), one) <= 1e-12);

  const double L = g.extent();
  const Field sine = sample_scalar(g, [&](const Point& x) { return std::sin(2 * M_PI * x[0] / L); });
  CHECK(rel_max_diff(dft_roundtrip(sine), sine) <= 1e-12);

  // Constant field puts everything in the zero mode.
  const Spectrum s = forward(one);
  CHECK(std::abs(s.at(0, 0) - cplx(1024.0, 0.0)) < 1e-9);
  CHECK(std::abs(s.at(0, 1)) < 1e-9);
}

TEST_CASE("transform roundtrip holds for 100 random fields", "[fft][property]") {
  for (unsigned seed = 0; seed < 100; ++seed) {
    const int dim = seed % 4 == 0 ? 3 : 2;
    const Grid g(dim, dim == 3 ? 8 : 32, 1.0 + seed);
    const Field u = white_noise(g, 1 + seed % 3, seed);
    INFO("seed " << seed);
    REQUIRE(rel_max_diff(dft_roundtrip(u), u) <= 1e-12);
  }
}

TEST_CASE("spectral derivative of single modes", "[derivative]") {
  const Grid g(2, 32, 16.0);
  const double L = g.extent();
  const double k = 2 * M_PI / L;
  const Field u = sample_scalar(g, [&](const Point& x) { return std::sin(k * x[0]); });
  const Field du = sample_scalar(g, [&](const Point& x) { return k * std::cos(k * x[0]); });
  CHECK(max_abs(spectral_derivative(u, 0, 1) - du) <= 1e-12);
  CHECK(max_abs(spectral_derivative(u, 1, 1)) <= 1e-12);
  CHECK(max_abs(spectral_derivative(u, 0, 2) + k * k * u) <= 1e-12);
  CHECK(max_abs(spectral_derivative(Field::scalar(g, 3.0), 0, 1)) <= 1e-12);

  CHECK_THROWS_AS(spectral_derivative(u, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(spectral_derivative(u, 0, 3), std::invalid_argument);
}

TEST_CASE("centered differences converge to the spectral derivative at second order",
          "[derivative][oracle]") {
  // The same band-limited function sampled at N and 2N.
  auto f = [](const Point& x) {
    return std::sin(x[0]) * std::cos(2 * x[1]) + 0.5 * std::cos(3 * x[0] + x[1]);
  };
  double err[2];
  int i = 0;
  for (int N : {32, 64}) {
    const Grid g(2, N, 2 * M_PI);
    const Field u = sample_scalar(g, f);
    err[i++] = max_abs(centered_difference(u, 0) - spectral_derivative(u, 0, 1));
  }
  const double ratio = err[0] / err[1];
  CHECK(ratio == Approx(4.0).margin(0.1));
}

TEST_CASE("spectral derivative commutes with grid translations", "[derivative][property]") {
  const Grid g(2, 32, 8.0);
  for (unsigned seed = 0; seed < 5; ++seed) {
    const Field u = white_noise(g, 1, seed);
    const Index step{3, -5, 0};
    const Field a = spectral_derivative(shift(u, step), 1, 1);
    const Field b = shift(spectral_derivative(u, 1, 1), step);
    CHECK(max_abs(a - b) <= 1e-12 * std::max(1.0, max_abs(b)));
  }
}

TEST_CASE("Lp norms", "[norm]") {
  const Grid g(2, 64, 16.0);
  const double V = g.volume();
  for (double p : {1.0, 2.0, 3.5}) {
    CHECK(lp_norm(Field::scalar(g, -2.0), p) == Approx(2.0 * std::pow(V, 1.0 / p)).epsilon(1e-13));
  }
  CHECK(lp_norm(Field::scalar(g, -2.0), kInf) == 2.0);
  CHECK(lp_norm(Field::vector(g), 2.0) == 0.0);
  CHECK_THROWS_AS(lp_norm(Field::scalar(g), 0.5), std::invalid_argument);

  // Gaussian exp(-|x|^2/2): its square integrates to pi in the plane.
  const Field bump = sample_scalar(g, [](const Point& x) {
    return std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1]));
  });
  CHECK(lp_norm(bump, 2.0) == Approx(std::sqrt(M_PI)).epsilon(1e-6));
}

TEST_CASE("Lp norm is monotone and satisfies the triangle inequality", "[norm][property]") {
  const Grid g(2, 32, 4.0);
  for (unsigned seed = 0; seed < 20; ++seed) {
    const Field u = white_noise(g, 2, seed);
    const Field v = white_noise(g, 2, seed + 1000);
    Field bigger = u;
    for (double& x : bigger.values()) x *= 1.5;
    for (double p : {1.0, 2.0, 4.0, kInf}) {
      CHECK(lp_norm(u, p) <= lp_norm(bigger, p));
      CHECK(lp_norm(u + v, p) <= lp_norm(u, p) + lp_norm(v, p) + 1e-12);
    }
  }
}

TEST_CASE("random band-limited fields have the requested support", "[field]") {
  const Grid g(2, 32, 2 * M_PI);
  const Field u = random_field(g, 2, 7, 2.0, 4.0);
  const Field again = random_field(g, 2, 7, 2.0, 4.0);
  CHECK(max_abs(u - again) == 0.0);
  const Spectrum s = forward(u);
  const auto w = WaveTable::get(g);
  double outside = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (std::size_t m = 0; m < s.modes(); ++m) {
      const double r = std::sqrt(w->xi2(m));
      if (r < 2.0 - 1e-9 || r > 4.0 + 1e-9) outside = std::max(outside, std::abs(s.at(c, m)));
    }
  }
  CHECK(outside <= 1e-9);
  CHECK(lp_norm(u, 2.0) == Approx(std::sqrt(2.0 * g.volume())).epsilon(1e-12));
}

TEST_CASE("random fields do not depend on the grid", "[field][refinement]") {
  for (int n : {2, 3}) {
    const Grid coarse(n, 16, 2 * M_PI);
    const Grid fine(n, 32, 2 * M_PI);
    const Field a = random_field(coarse, n, 11, 1.0, 5.0);
    const Field b = random_field(fine, n, 11, 1.0, 5.0);
    double worst = 0.0;
    for (std::size_t k = 0; k < coarse.node_count(); ++k) {
      Index i = coarse.index(k);
      for (int d = 0; d < n; ++d) i[d] *= 2;
      const std::size_t kf = fine.node(i);
      for (int c = 0; c < n; ++c) worst = std::max(worst, std::abs(a.at(c, k) - b.at(c, kf)));
    }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("PLF1 byte layout", "[io]") {
  const Grid g(2, 8, 3.0);
  Field u = Field::vector(g);
  for (std::size_t i = 0; i < u.values().size(); ++i) u.values()[i] = 0.5 * i;
  const std::string b = plf1_encode(u);
  REQUIRE(b.size() == 4 + 12 + 8 + 2 * 64 * 8);
  CHECK(b.substr(0, 4) == "PLF1");
  std::uint32_t hdr[3];
  std::memcpy(hdr, b.data() + 4, 12);
  CHECK(hdr[0] == 2);
  CHECK(hdr[1] == 8);
  CHECK(hdr[2] == 2);
  double L;
  std::memcpy(&L, b.data() + 16, 8);
  CHECK(L == 3.0);
  double second;
  std::memcpy(&second, b.data() + 24 + 8, 8);
  CHECK(second == 0.5);
  const Field back = plf1_decode(b);
  CHECK(back.same_shape(u));
  CHECK(max_abs(back - u) == 0.0);
  CHECK_THROWS_AS(plf1_decode("PLF0" + b.substr(4)), std::invalid_argument);
  CHECK_THROWS_AS(plf1_decode(b.substr(0, b.size() - 1)), std::invalid_argument);
}

TEST_CASE("CSV quoting follows RFC 4180", "[io]") {
  CsvTable t({"name", "value"});
  t.add({"plain", "1"});
  t.add({"with,comma", "say \"hi\""});
  const std::string s = t.str();
  CHECK(s == "name,value\r\nplain,1\r\n\"with,comma\",\"say \"\"hi\"\"\"\r\n");
  const auto rows = csv_parse(s);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2][0] == "with,comma");
  CHECK(rows[2][1] == "say \"hi\"");
}
