#include <catch_amalgamated.hpp>

#include <cmath>

#include "lamelab/eulerian.hpp"
#include "lamelab/lagrangian.hpp"

using namespace lamelab;
using Catch::Approx;

namespace {

const LameParams kLame{1.0, 0.5};

Field smooth_displacement(const Grid& g, double eps) {
  return sample(g, 2, [eps](const Point& x, std::span<double> o) {
    o[0] = eps * std::sin(x[1]);
    o[1] = eps * std::sin(x[0]);
  });
}

Field smooth_velocity(const Grid& g) {
  return sample(g, 2, [](const Point& x, std::span<double> o) {
    o[0] = std::cos(x[1]) + 0.3 * std::sin(2 * x[0]);
    o[1] = std::sin(x[0] - x[1]);
  });
}

LagrangianState constant_in_time(const Coefficient& rho0, const Field& v, double T, double dt) {
  LagrangianState s{uniform_times(T, dt), {}, rho0, kLame, {}};
  s.u.assign(s.times.size(), v);
  return s;
}

LagrangianState scaled(LagrangianState s, double a) {
  for (Field& u : s.u) u *= a;
  return s;
}

PicardConfig small_config(double T = 2.0) {
  PicardConfig cfg;
  cfg.T = T;
  cfg.dt = 0.02;
  cfg.c = 2.0;
  return cfg;
}

}  // namespace

TEST_CASE("flow map of trivial velocities", "[lagrangian][flow]") {
  const Grid g(2, 16, 2 * M_PI);
  const auto rho0 = constant_coefficient(g);
  const auto zero = flow_map(constant_in_time(rho0, Field::vector(g), 1.0, 0.1));
  for (const auto& fr : zero.frames) {
    CHECK(max_abs(fr.displacement) == 0.0);
    for (std::size_t k = 0; k < g.node_count(); ++k) {
      CHECK(fr.J.at(0, k) == 1.0);
      CHECK(fr.DX.at(0, k) == 1.0);
      CHECK(fr.DX.at(1, k) == 0.0);
      CHECK(fr.A.at(3, k) == 1.0);
      CHECK(fr.adj.at(2, k) == 0.0);
    }
  }
  Field c = Field::vector(g);
  for (double& v : c.component(0)) v = 0.7;
  for (double& v : c.component(1)) v = -0.2;
  const auto tr = flow_map(constant_in_time(rho0, c, 1.0, 0.1));
  for (const auto& fr : tr.frames) {
    CHECK(fr.displacement.at(0, 5) == Approx(0.7 * fr.t).margin(1e-14));
    CHECK(fr.displacement.at(1, 9) == Approx(-0.2 * fr.t).margin(1e-14));
    CHECK(max_abs(fr.J - Field::scalar(g, 1.0)) < 1e-13);
  }
}

TEST_CASE("flow map integrates each trajectory", "[lagrangian][flow]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto rho0 = constant_coefficient(g);
  const Field v = 0.05 * random_field(g, 2, 11, 1.0, 4.0);
  const double T = 1.0;
  // time-independent: X = y + t v exactly
  const auto fl = flow_map(constant_in_time(rho0, v, T, 0.05));
  CHECK(max_abs(fl.frames.back().displacement - T * v) < 1e-12);
  // u = cos(t) v against the exact integral sin(t) v
  LagrangianState s{uniform_times(T, 1e-4), {}, rho0, kLame, {}};
  for (double t : s.times) s.u.push_back(std::cos(t) * v);
  Field d = Field::vector(g);
  detail::for_each_frame(s, [&](std::size_t i, const FlowFrame& fr) {
    if (i + 1 == s.times.size()) d = fr.displacement;
  });
  CHECK(max_abs(d - std::sin(T) * v) < 1e-8);
}

TEST_CASE("flow map invariants", "[lagrangian][flow][property]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto rho0 = checkerboard_coefficient(g, 0.5);
  LagrangianState s{uniform_times(1.0, 0.05), {}, rho0, kLame, {}};
  const Field v = 0.2 * random_field(g, 2, 5, 1.0, 4.0);
  for (double t : s.times) s.u.push_back(std::exp(-t) * v);
  const auto fl = flow_map(s);
  CHECK(fl.adjugate_defect() <= 1e-10);
  CHECK(fl.J_min > 0.0);
  CHECK(fl.volume_defect() <= 1e-6);
  CHECK(fl.frames.front().J.at(0, 0) == 1.0);
  CHECK_THROWS_AS(flow_map(scaled(s, 40.0)), DiffeomorphismLoss);
  try {
    flow_map(scaled(s, 40.0));
  } catch (const DiffeomorphismLoss& e) {
    CHECK(e.jacobian() <= 0.0);
    CHECK(e.time() > 0.0);
    CHECK(e.node() < g.node_count());
  }
}

TEST_CASE("change of variable identities", "[lagrangian][cov]") {
  auto residual = [](int N, bool translate) {
    const Grid g(2, N, 2 * M_PI);
    const Field phi = sample_scalar(g, [](const Point& x) {
      return std::sin(x[0]) * std::cos(2 * x[1]) + 0.5 * std::cos(x[0] + x[1]);
    });
    Field d = smooth_displacement(g, 0.1);
    if (translate) {
      for (double& v : d.component(0)) v = 0.37;
      for (double& v : d.component(1)) v = -0.21;
    }
    return change_of_variable_residual(phi, smooth_velocity(g), flow_frame(d, 0.0));
  };
  SECTION("identity flow") {
    const Grid g(2, 32, 2 * M_PI);
    const Field phi = sample_scalar(g, [](const Point& x) { return std::cos(x[0]) * std::sin(x[1]); });
    const auto r = change_of_variable_residual(phi, smooth_velocity(g), flow_frame(Field::vector(g), 0.0));
    CHECK(r.max() <= 1e-10);
  }
  SECTION("translation flow") { CHECK(residual(64, true).max() <= 1e-10); }
  SECTION("small smooth flow") {
    const auto r64 = residual(64, false);
    const auto r128 = residual(128, false);
    CHECK(r128.max() <= 1e-4);
    // The interpolation error is O(h^4) but varies on the grid scale, so each
    // derivative taken after composing costs one power of h.
    CHECK(r64.gradient / r128.gradient == Approx(8.0).epsilon(0.2));
    CHECK(r64.divergence_trace / r128.divergence_trace == Approx(8.0).epsilon(0.2));
    CHECK(r64.divergence_adjugate / r128.divergence_adjugate == Approx(8.0).epsilon(0.2));
    CHECK(r64.laplacian / r128.laplacian == Approx(4.0).epsilon(0.2));
  }
}

TEST_CASE("nonlinearity of trivial states", "[lagrangian][nonlinearity]") {
  const Grid g(2, 16, 2 * M_PI);
  const auto rho0 = checkerboard_coefficient(g, 0.5);
  for (const Field& f : nonlinearity_f(constant_in_time(rho0, Field::vector(g), 1.0, 0.25))) {
    CHECK(max_abs(f) == 0.0);
  }
  Field c = Field::vector(g);
  for (double& v : c.component(0)) v = 0.3;
  for (double& v : c.component(1)) v = 0.1;
  for (const Field& f : nonlinearity_f(constant_in_time(rho0, c, 1.0, 0.25))) CHECK(max_abs(f) <= 1e-13);
}

TEST_CASE("nonlinearity equals the transported Eulerian operator", "[lagrangian][nonlinearity][oracle]") {
  // f(u) + L u = J (L v) o X with v = u o X^{-1}
  const Grid g(2, 64, 2 * M_PI);
  const FlowFrame fr = flow_frame(smooth_displacement(g, 0.1), 0.0);
  const Field u = smooth_velocity(g);
  Field lhs = nonlinearity_at(u, fr, kLame);
  lhs += lame_apply(u, kLame);
  const Field v = compose(u, invert_flow(fr.displacement));
  Field rhs = compose(lame_apply(v, kLame), displaced_positions(fr.displacement));
  rhs = multiply(fr.J, rhs);
  const Field f = nonlinearity_at(u, fr, kLame);
  CHECK(max_abs(lhs - rhs) / max_abs(f) <= 1e-3);
}

TEST_CASE("nonlinearity is quadratic in the amplitude", "[lagrangian][nonlinearity][property]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto rho0 = checkerboard_coefficient(g, 0.5);
  LagrangianState s{uniform_times(1.0, 0.05), {}, rho0, kLame, {}};
  const Field v = random_field(g, 2, 9, 1.0, 4.0);
  for (double t : s.times) s.u.push_back(std::exp(-2.0 * t) * v);
  const BesovIndex idx{0.0, 2.0, 1.0};
  std::vector<double> norms;
  for (double a : {0.2, 0.1, 0.05}) norms.push_back(l1_besov(nonlinearity_f(scaled(s, a)), s.dt(), idx));
  CHECK(norms[0] / norms[1] == Approx(4.0).epsilon(0.2));
  CHECK(norms[1] / norms[2] == Approx(4.0).epsilon(0.2));
}

TEST_CASE("flow estimate", "[lagrangian][flow-estimate]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto rho0 = checkerboard_coefficient(g, 0.5);
  const auto zero = flow_estimate_check(constant_in_time(rho0, Field::vector(g), 1.0, 0.1));
  CHECK(zero.lhs == 0.0);
  CHECK(zero.rhs == 0.0);
  CHECK_FALSE(zero.flagged);

  LagrangianState s{uniform_times(1.0, 0.05), {}, rho0, kLame, {}};
  const Field v = random_field(g, 2, 4, 1.0, 4.0);
  for (double t : s.times) s.u.push_back(std::exp(-t) * v);
  const auto a = flow_estimate_check(scaled(s, 0.002));
  const auto b = flow_estimate_check(scaled(s, 0.001));
  CHECK_FALSE(a.flagged);
  CHECK(a.lhs / b.lhs == Approx(2.0).epsilon(0.2));
  CHECK(a.ratio == Approx(b.ratio).epsilon(0.2));
  CHECK(flow_estimate_check(scaled(s, 0.05)).flagged);

  const auto same = flow_difference_check(scaled(s, 0.002), scaled(s, 0.002));
  CHECK(same.lhs == 0.0);
  CHECK(same.rhs == 0.0);
  const auto diff = flow_difference_check(scaled(s, 0.002), scaled(s, 0.0016));
  CHECK(diff.rhs > 0.0);
  CHECK(diff.ratio == Approx(a.ratio).epsilon(0.2));
}

TEST_CASE("Picard with zero data", "[lagrangian][picard]") {
  const Grid g(2, 16, 2 * M_PI);
  const auto r = picard_solve(checkerboard_coefficient(g, 0.5), kLame, Field::vector(g), small_config(1.0));
  CHECK(r.diag.converged);
  CHECK(r.diag.iterations == 0);
  for (const Field& u : r.state.u) CHECK(max_abs(u) == 0.0);
}

TEST_CASE("Picard contraction on rough density", "[lagrangian][picard]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto rho0 = checkerboard_coefficient(g, 0.5);
  const Field u0 = 0.1 * random_field(g, 2, 7, 1.0, 4.0);
  const auto r = picard_solve(rho0, kLame, u0, small_config());
  REQUIRE(r.diag.converged);
  CHECK_FALSE(r.diag.flagged);
  CHECK(r.diag.deltas.back() <= r.diag.stop_tol);
  CHECK(r.diag.factors.size() >= 2);
  CHECK(r.diag.max_factor() <= 0.5);
  CHECK(r.diag.ep_norms.size() == r.diag.deltas.size() + 1);
  CHECK(r.diag.growth_constant() > 1.0);
  CHECK(r.diag.growth_constant() < 10.0);
  CHECK(max_abs(r.state.u.front() - u0) == 0.0);
  CHECK(nonlinear_residual(r.state) <= 10.0 * r.diag.stop_tol);

  // Outside the certified regime the run is flagged, not refused.
  PicardConfig tight = small_config();
  tight.c = 0.5 * r.diag.u0_norm;
  const auto flagged = picard_solve(rho0, kLame, u0, tight);
  CHECK(flagged.diag.flagged);
  CHECK(flagged.diag.converged);
}

TEST_CASE("Picard divergence carries the factor history", "[lagrangian][picard]") {
  const Grid g(2, 16, 2 * M_PI);
  PicardConfig cfg = small_config(1.0);
  cfg.max_iter = 3;
  const Field u0 = 0.1 * random_field(g, 2, 7, 1.0, 4.0);
  try {
    picard_solve(checkerboard_coefficient(g, 0.5), kLame, u0, cfg);
    FAIL("expected PicardDivergence");
  } catch (const PicardDivergence& e) {
    CHECK(e.factors().size() == 2);
  }
}

TEST_CASE("Picard at p = 4", "[lagrangian][picard]") {
  // negative-regularity branch: n/p - 1 = -1/2
  const Grid g(2, 32, 2 * M_PI);
  PicardConfig cfg = small_config();
  cfg.p = 4.0;
  const auto r = picard_solve(checkerboard_coefficient(g, 0.5), kLame, 0.1 * random_field(g, 2, 7, 1.0, 4.0), cfg);
  REQUIRE(r.diag.converged);
  CHECK(r.diag.max_factor() <= 0.5);
  CHECK(nonlinear_residual(r.state, 4.0) <= 10.0 * r.diag.stop_tol);
}

TEST_CASE("gradient sup integral", "[lagrangian][decay]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto rho0 = constant_coefficient(g);
  CHECK(grad_sup_integral(constant_in_time(rho0, Field::vector(g), 1.0, 0.1)).value == 0.0);
  // solenoidal mode a (0, sin(k y1)) decays like exp(-mu k^2 t)
  const double a = 0.3, k = 2.0, T = 1.0;
  const Field v = sample(g, 2, [&](const Point& x, std::span<double> o) {
    o[0] = 0.0;
    o[1] = a * std::sin(k * x[0]);
  });
  LagrangianState s{uniform_times(T, 0.005), {}, rho0, kLame, {}};
  for (double t : s.times) s.u.push_back(std::exp(-kLame.mu * k * k * t) * v);
  const auto gs = grad_sup_integral(s);
  const double rate = kLame.mu * k * k;
  CHECK(gs.value == Approx(a * k / rate * (1.0 - std::exp(-rate * T))).epsilon(1e-3));
  CHECK(gs.decay_rate == Approx(rate).epsilon(1e-6));
  CHECK(gs.tail == Approx(a * k / rate * std::exp(-rate * T)).epsilon(1e-6));
}

TEST_CASE("push-forward to Eulerian coordinates", "[lagrangian][pushforward]") {
  const Grid g(2, 64, 2 * M_PI);
  const auto rho0 = checkerboard_coefficient(g, 0.5);
  SECTION("identity flow") {
    const LagrangianState still = constant_in_time(rho0, Field::vector(g), 0.5, 0.1);
    const auto e = pushforward_eulerian(still, flow_map(still));
    CHECK(e.times.size() == still.times.size());
    CHECK(max_abs(e.rho.back() - rho0.rho) <= 1e-12);
    CHECK(max_abs(e.u.back()) == 0.0);
  }
  SECTION("translation flow") {
    const Point c{0.3, -0.45, 0.0};
    auto analytic = [](const Point& x, std::span<double> o) {
      o[0] = std::sin(x[0]) * std::cos(x[1]);
      o[1] = std::cos(2 * x[0]);
    };
    const auto rho1 = constant_coefficient(g);
    Field cf = Field::vector(g);
    for (double& v : cf.component(0)) v = c[0];
    for (double& v : cf.component(1)) v = c[1];
    // fields carried by X = y + c are shifted by c
    const Field shape = sample(g, 2, analytic);
    const Field back = compose(shape, invert_flow(cf));
    const Field want = sample(g, 2, [&](const Point& x, std::span<double> o) {
      analytic(Point{x[0] - c[0], x[1] - c[1], 0.0}, o);
    });
    CHECK(max_abs(back - want) <= 1e-6);
    const LagrangianState s = constant_in_time(rho1, cf, 1.0, 0.1);
    const auto e = pushforward_eulerian(s, flow_map(s), 5);
    CHECK(e.times.back() == Approx(1.0));
    CHECK(max_abs(e.rho.back() - rho1.rho) <= 1e-12);
    CHECK(max_abs(e.u.back() - cf) <= 1e-12);
  }
  SECTION("roundtrip") {
    const FlowFrame fr = flow_frame(0.1 * random_field(g, 2, 8, 1.0, 3.0), 1.0);
    CHECK(roundtrip_defect(fr) <= 1e-8);
    CHECK_THROWS_AS(invert_flow(fr.displacement, InversionConfig{1e-15, 1, 1.0}), InversionFailure);
  }
}

TEST_CASE("density transport on a converged run", "[lagrangian][density]") {
  const Grid g(2, 64, 2 * M_PI);
  const auto rho0 = checkerboard_coefficient(g, 0.5);
  const auto r = picard_solve(rho0, kLame, 0.1 * random_field(g, 2, 7, 1.0, 4.0), small_config());
  const auto fl = flow_map(r.state);
  CHECK(fl.J_min >= 0.5);
  CHECK(fl.J_max <= 2.0);
  CHECK(grad_sup_integral(r.state).value < 1.0);
  const auto e = pushforward_eulerian(r.state, fl, 25);
  const auto rep = density_transport_check(r.state, fl, e);
  CHECK(rep.nodewise_defect <= 1e-4);
  CHECK(rep.continuity_defect <= 1e-4);
  CHECK(rep.mass_defect <= 1e-6);

  // constant density under a translation stays constant
  const auto rho1 = constant_coefficient(g, 1.3);
  Field cf = Field::vector(g);
  for (double& v : cf.component(0)) v = 0.4;
  const LagrangianState s = constant_in_time(rho1, cf, 1.0, 0.1);
  const auto fl1 = flow_map(s);
  const auto e1 = pushforward_eulerian(s, fl1, 5);
  for (const Field& rho : e1.rho) CHECK(max_abs(rho - rho1.rho) <= 1e-12);
  const auto rep1 = density_transport_check(s, fl1, e1);
  CHECK(rep1.nodewise_defect <= 1e-12);
  CHECK(rep1.grid_defect <= 1e-12);
}

TEST_CASE("Eulerian reference solver", "[eulerian]") {
  const Grid g(2, 32, 2 * M_PI);
  const auto rough = checkerboard_coefficient(g, 0.5);
  EulerianConfig cfg;
  cfg.T = 0.5;
  cfg.dt = 0.02;
  SECTION("zero data") {
    const auto e = eulerian_reference_solve(rough, kLame, Field::vector(g), cfg);
    CHECK(max_abs(e.rho.back() - rough.rho) <= 1e-12);
    CHECK(max_abs(e.u.back()) == 0.0);
  }
  SECTION("CFL rejection") {
    EulerianConfig big = cfg;
    big.dt = 0.5;
    CHECK_THROWS_AS(eulerian_reference_solve(rough, kLame, 2.0 * random_field(g, 2, 1, 1.0, 3.0), big),
                    std::invalid_argument);
  }
  SECTION("small data approaches the linear flow") {
    const auto unit = constant_coefficient(g);
    const Field shape = random_field(g, 2, 2, 1.0, 3.0);
    StepperConfig sc;
    sc.dt = cfg.dt;
    sc.tol = 1e-12;
    std::vector<double> rel;
    for (double a : {0.02, 0.01}) {
      const Field u0 = a * shape;
      const Field lin = evolve(unit, kLame, u0, {}, {0.0, cfg.T}, sc).states.back();
      EulerianConfig off = cfg;
      off.advect = false;
      CHECK(relative_l2(eulerian_reference_solve(unit, kLame, u0, off).u.back(), lin) <= 1e-10);
      rel.push_back(relative_l2(eulerian_reference_solve(unit, kLame, u0, cfg).u.back(), lin));
    }
    CHECK(rel[0] / rel[1] == Approx(2.0).epsilon(0.2));
  }
  SECTION("agrees with the Lagrangian push-forward") {
    const Field u0 = 0.1 * random_field(g, 2, 7, 1.0, 4.0);
    const auto r = picard_solve(rough, kLame, u0, small_config(cfg.T));
    const auto e = pushforward_eulerian(r.state, flow_map(r.state), 1000);
    const auto ref = eulerian_reference_solve(rough, kLame, u0, cfg);
    CHECK(relative_l2(e.u.back(), ref.u.back()) <= 0.05);
  }
}
