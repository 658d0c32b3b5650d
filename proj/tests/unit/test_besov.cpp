#include <catch_amalgamated.hpp>

#include <cmath>

#include "lamelab/besov.hpp"

using namespace lamelab;
using Catch::Approx;

namespace {

Field single_mode(const Grid& g, int kx, int ky) {
  return sample_scalar(g, [&](const Point& x) { return std::cos(kx * x[0] + ky * x[1]); });
}

}  // namespace

TEST_CASE("dyadic symbols form a partition of unity", "[besov][property]") {
  for (const Grid g : {Grid(2, 32, 2 * M_PI), Grid(2, 64, 16.0), Grid(3, 16, 5.0)}) {
    const auto part = DyadicPartition::get(g);
    CHECK(part->partition_defect() <= 1e-12);
    const auto w = WaveTable::get(g);
    CHECK(std::ldexp(1.0, part->j_min()) <= w->min_xi());
    CHECK(std::ldexp(1.0, part->j_max()) >= w->max_xi());
  }
}

TEST_CASE("dyadic symbols are supported in annuli of ratio four", "[besov]") {
  for (int j : {-2, 0, 3}) {
    const double lo = std::ldexp(1.0, j - 1);
    const double hi = std::ldexp(1.0, j + 1);
    CHECK(lp_symbol(j, 0.999 * lo) == 0.0);
    CHECK(lp_symbol(j, 1.001 * hi) == 0.0);
    CHECK(lp_symbol(j, std::ldexp(1.0, j)) == 1.0);
    CHECK(lp_symbol(j, 1.3 * lo) > 0.0);
  }
  CHECK(smooth_step(0.5) == Approx(0.5));
  CHECK(smooth_step(0.0) == 0.0);
  CHECK(smooth_step(1.0) == 1.0);
}

TEST_CASE("dyadic blocks", "[besov]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto part = DyadicPartition::get(g);

  // |xi| = 4 = 2^2 sits where chi_2 = 1.
  const Field u = single_mode(g, 4, 0);
  CHECK(max_abs(dyadic_block(u, 2) - u) <= 1e-12);
  CHECK(max_abs(dyadic_block(u, 1)) <= 1e-12);
  CHECK(max_abs(dyadic_block(u, 3)) <= 1e-12);

  const Field c = Field::scalar(g, 2.5);
  for (int j = part->j_min(); j <= part->j_max(); ++j) CHECK(max_abs(dyadic_block(c, j)) == 0.0);

  const Field r = random_field(g, 1, 4, 1.0, 12.0);
  Field sum = Field::scalar(g);
  for (int j = part->j_min(); j <= part->j_max(); ++j) sum += dyadic_block(r, j);
  CHECK(max_abs(sum - r) <= 1e-12 * max_abs(r));

  CHECK_THROWS_AS(dyadic_block(r, part->j_max() + 1), std::invalid_argument);
  CHECK_THROWS_AS(dyadic_block(r, part->j_min() - 1), std::invalid_argument);
}

TEST_CASE("Besov norm of simple inputs", "[besov]") {
  const Grid g(2, 32, 2 * M_PI);
  CHECK(besov_norm(Field::scalar(g), {0.5, 2, 1}).value == 0.0);

  // Unit-L^p single mode on block j = 3: the norm is exactly 2^{3s}.
  Field u = single_mode(g, 8, 0);
  for (double p : {1.0, 2.0, 4.0}) {
    Field v = u;
    v *= 1.0 / lp_norm(u, p);
    for (double s : {-0.5, 0.0, 1.0}) {
      CHECK(besov_norm(v, {s, p, 1.0}).value == Approx(std::pow(2.0, 3 * s)).epsilon(1e-10));
    }
  }

  // Plancherel: with s = 0, p = r = 2 the norm is within a factor 2 of L^2.
  for (unsigned seed = 0; seed < 5; ++seed) {
    const Field r = random_field(g, 2, seed, 1.0, 14.0, 0.5);
    const double ratio = besov_norm(r, {0.0, 2.0, 2.0}).value / lp_norm(r, 2.0);
    CHECK(ratio >= 0.5);
    CHECK(ratio <= 2.0);
  }
}

TEST_CASE("boundary blocks are reported", "[besov]") {
  const Grid g(2, 32, 2 * M_PI);
  CHECK_FALSE(besov_norm(random_field(g, 1, 1, 2.0, 6.0), {0.0, 2, 1}).flagged());
  // The lowest torus mode lives in the first block.
  CHECK(besov_norm(single_mode(g, 1, 0), {0.0, 2, 1}).flagged());
}

TEST_CASE("Besov norm is homogeneous and blocks contract", "[besov][property]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto part = DyadicPartition::get(g);
  for (unsigned seed = 0; seed < 5; ++seed) {
    const Field u = random_field(g, 2, seed, 1.0, 14.0, 0.5);
    for (const BesovIndex idx : {BesovIndex{0.5, 2, 1}, BesovIndex{-0.5, 2, 1}, BesovIndex{1.0, 2, 2}}) {
      const double n = besov_norm(u, idx).value;
      Field cu = u;
      cu *= -3.7;
      CHECK(besov_norm(cu, idx).value == Approx(3.7 * n).epsilon(1e-12));
      for (int j = part->j_min(); j <= part->j_max(); ++j) {
        CHECK(besov_norm(dyadic_block(u, j), idx).value <= n * (1 + 1e-10));
      }
    }
  }
}

TEST_CASE("heat characterization against the closed-form Gaussian integral", "[besov][oracle]") {
  // For k = 1, s = 1, q = 2 and G = Lap, the squared norm is
  // sum_xi |u_xi|^2 |xi|^4 int t e^{-2t|xi|^2} dt / t = ||grad u||^2 / 2.
  // For u = exp(-|x|^2/2) in the plane, ||grad u||^2 = pi.
  const Grid g(2, 64, 16.0);
  const Field u = sample_scalar(g, [](const Point& x) {
    return std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1]));
  });
  const double v = heat_char_norm(u, 1.0, 2.0, 2.0, 1, ScaledLaplacian{1.0}).value;
  CHECK(v == Approx(std::sqrt(M_PI / 2.0)).epsilon(1e-4));
}

TEST_CASE("heat characterization basics", "[besov]") {
  const Grid g(2, 32, 2 * M_PI);
  CHECK(heat_char_norm(Field::scalar(g), 0.5, 2, 1, 1, ScaledLaplacian{1.0}).value == 0.0);
  const Field u = random_field(g, 1, 3);
  CHECK_THROWS_AS(heat_char_norm(u, 1.0, 2, 1, 0, ScaledLaplacian{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(heat_char_norm(u, 0.5, 2, 1, 1, LameParams{1.0, 0.0}), std::invalid_argument);
  CHECK(heat_power(0.5) == 1);
  CHECK(heat_power(0.0) == 1);
  CHECK(heat_power(-0.5) == 0);
}

TEST_CASE("heat and Littlewood-Paley norms are comparable", "[besov][property]") {
  const Grid g(2, 32, 2 * M_PI);
  const LameParams lame{1.0, 0.5};
  for (unsigned seed = 0; seed < 4; ++seed) {
    const Field u = random_field(g, 2, seed, 2.0, 10.0, 0.5);
    for (double s : {-0.5, 0.0, 0.5}) {
      for (const Generator gen : {Generator{ScaledLaplacian{1.0}}, Generator{lame}}) {
        const double heat = heat_char_norm(u, s, 2.0, 1.0, heat_power(s), gen).value;
        const double lp = besov_norm(u, {s, 2.0, 1.0}).value;
        CHECK(heat / lp > 0.1);
        CHECK(heat / lp < 10.0);
      }
    }
  }
}

TEST_CASE("multiplier ratios", "[besov]") {
  const Grid g(2, 32, 2 * M_PI);
  std::vector<Field> tests;
  for (unsigned seed = 0; seed < 3; ++seed) tests.push_back(random_field(g, 1, seed, 2.0, 5.0));
  const BesovIndex idx{0.0, 2.0, 1.0};
  CHECK(multiplier_ratio(Field::scalar(g, 1.0), idx, tests) == Approx(1.0).epsilon(1e-12));
  CHECK(multiplier_ratio(Field::scalar(g, 1.7), idx, tests) == Approx(1.7).epsilon(1e-10));
  CHECK_THROWS_AS(multiplier_ratio(Field::scalar(g, 1.0), idx, {}), std::invalid_argument);
}

TEST_CASE("smooth multiplier ratio is stable under grid doubling", "[besov][refinement]") {
  auto rho = [](const Point& x) { return 1.25 + 0.75 * std::sin(x[0]) * std::cos(x[1]); };
  double ratio[2];
  int i = 0;
  for (int N : {32, 64}) {
    const Grid g(2, N, 2 * M_PI);
    std::vector<Field> tests;
    for (unsigned seed = 0; seed < 20; ++seed) tests.push_back(random_field(g, 1, seed, 2.0, 6.0));
    ratio[i++] = multiplier_ratio(sample_scalar(g, rho), {0.0, 2.0, 1.0}, tests);
  }
  CHECK(std::isfinite(ratio[0]));
  CHECK(ratio[1] == Approx(ratio[0]).epsilon(0.2));
}

TEST_CASE("product law ratios", "[besov]") {
  const Grid g(2, 32, 2 * M_PI);
  const Field bump = recenter(sample_scalar(g, [](const Point& x) {
    return std::exp(-2.0 * (x[0] * x[0] + x[1] * x[1]));
  }));
  const double r = product_law_ratio(bump, bump, 2.0);
  CHECK(std::isfinite(r));
  CHECK(r > 0.0);

  const Field u = random_field(g, 1, 1, 2.0, 5.0);
  const Field v = random_field(g, 1, 2, 2.0, 5.0);
  Field v3 = v;
  v3 *= 3.0;
  CHECK(product_law_ratio(u, v3, 2.0) == Approx(product_law_ratio(u, v, 2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(product_law_ratio(Field::scalar(g), v, 2.0), std::invalid_argument);
}

TEST_CASE("product law ratios are bounded and grid stable", "[besov][refinement]") {
  double worst[2][2] = {{0, 0}, {0, 0}};
  int i = 0;
  for (int N : {32, 64}) {
    const Grid g(2, N, 2 * M_PI);
    for (unsigned seed = 0; seed < 50; ++seed) {
      const Field u = random_field(g, 1, 2 * seed, 2.0, 5.0);
      const Field v = random_field(g, 1, 2 * seed + 1, 2.0, 5.0);
      worst[i][0] = std::max(worst[i][0], product_law_ratio(u, v, 2.0, ProductPairing::Critical));
      worst[i][1] = std::max(worst[i][1], product_law_ratio(u, v, 2.0, ProductPairing::Mixed));
    }
    ++i;
  }
  for (int k = 0; k < 2; ++k) {
    CHECK(std::isfinite(worst[0][k]));
    CHECK(worst[1][k] == Approx(worst[0][k]).epsilon(0.2));
  }
}
