#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bnlab/gauss_kernels.hpp"
#include "bnlab/statmech.hpp"

using namespace bnlab;

TEST_CASE("eps_id_ord values and pole") {
  CHECK(eps_id_ord(0.0, 0.25) == 1.0);
  CHECK(eps_id_ord(0.5, 0.25) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(eps_id_ord(2.0, 0.25) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(eps_id_ord(1.0, 0.25), PoleError);
  try {
    eps_id_ord(1.0, 0.25);
  } catch (const PoleError& e) {
    CHECK(e.pole() == 1.0);
  }
  CHECK_THROWS_AS(eps_id_ord(-0.1, 0.25), DomainError);
}

TEST_CASE("eps_id_ord falls then rises toward the pole") {
  const double S = 0.25;
  // Interior minimum from d/d alpha = 0: alpha* = 1 - sqrt(S).
  for (int refine : {200, 2000}) {
    double best_alpha = 0, best = 1e9;
    for (int k = 1; k < refine; ++k) {
      const double a = 0.99 * k / refine;
      if (eps_id_ord(a, S) < best) {
        best = eps_id_ord(a, S);
        best_alpha = a;
      }
    }
    CHECK(std::abs(best_alpha - 0.5) < 0.01);
  }
  double prev = eps_id_ord(0.01, S);
  for (double a = 0.02; a < 0.5; a += 0.01) {
    CHECK(eps_id_ord(a, S) < prev);
    prev = eps_id_ord(a, S);
  }
  prev = eps_id_ord(0.51, S);
  for (double a = 0.52; a < 0.99; a += 0.01) {
    CHECK(eps_id_ord(a, S) > prev);
    prev = eps_id_ord(a, S);
  }
}

TEST_CASE("eps_relu_ord values, pole, monotonicity") {
  CHECK(eps_relu_ord(0.0, 0.7) == 1.0);
  CHECK(eps_relu_ord(1.0, 0.25) == doctest::Approx(0.875).epsilon(1e-15));
  CHECK(eps_relu_ord(1.0, 0.0) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(eps_relu_ord(2.0, 0.25), PoleError);
  CHECK_THROWS_AS(eps_relu_ord(2.5, 0.25), DomainError);
  for (double a = 0.0; a < 1.95; a += 0.05) {
    CHECK(eps_relu_ord(a, 0.0) == 1 - a / 4);
    CHECK(eps_relu_ord(a, 0.3) >= eps_relu_ord(a, 0.2));
  }
}

TEST_CASE("eps_id_wn: analytic derivatives agree with finite differences") {
  for (double alpha : {0.1, 0.5, 0.99, 1.0, 1.01, 1.5, 3.0}) {
    for (double zeta : {1e-3, 1.0 / 64, 0.1, 0.25, 1.0}) {
      for (double S : {0.0, 0.25, 1.0}) {
        CHECK(eps_id_wn(alpha, zeta, S) == doctest::Approx(eps_id_wn_fd(alpha, zeta, S)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("eps_id_wn limits") {
  CHECK(std::abs(eps_id_wn(1e-9, 0.25, 0.25) - 1) < 1e-3);
  CHECK(eps_id_wn(0.0, 0.25, 0.25) == doctest::Approx(1.0).epsilon(1e-14));
  const double at_one = eps_id_wn(1.0, 0.25, 0.25);
  CHECK(std::isfinite(at_one));
  CHECK(at_one > 0);
  for (double alpha : {0.25, 0.5, 0.75, 1.25, 1.5, 2.0}) {
    CHECK(std::abs(eps_id_wn(alpha, 1e-6, 0.25) - eps_id_ord(alpha, 0.25)) < 1e-3);
  }
  CHECK_THROWS_AS(eps_id_wn(0.5, 0.0, 0.25), DomainError);
}

TEST_CASE("eps_id_wn at alpha = 1 is minimized by zeta = S") {
  double lo = 0.01, hi = 2.0;
  const double phi = (std::sqrt(5.0) - 1) / 2;
  for (int k = 0; k < 100; ++k) {
    const double a = hi - phi * (hi - lo);
    const double b = lo + phi * (hi - lo);
    if (eps_id_wn(1.0, a, 0.25) < eps_id_wn(1.0, b, 0.25)) hi = b; else lo = a;
  }
  CHECK(0.5 * (lo + hi) == doctest::Approx(0.25).epsilon(1e-6));
  for (double zeta : {0.05, 0.1, 0.2, 0.3, 0.5, 1.0}) {
    CHECK(eps_id_wn(1.0, zeta, 0.25) >= eps_id_wn(1.0, 0.25, 0.25));
  }
}

TEST_CASE("free energy domain") {
  FreeEnergyParams p{1.0, 0.5, 1.0, 1.0, 0.25, 10.0};
  CHECK_THROWS_AS(free_energy(p), DomainError);
  p.q = 2;
  CHECK(std::isfinite(free_energy(p)));
  p.beta_inv_temp = 0;
  CHECK_THROWS_AS(free_energy(p), DomainError);
}

TEST_CASE("stationarity residual is the rescaled gradient of -beta f") {
  // Finite differences of the literal expression in (u, r) = (gamma^2, gamma R) at moderate beta.
  const double q = 2.5;
  for (double beta : {0.5, 3.0, 50.0}) {
    for (double alpha : {0.5, 1.3}) {
      const double S = 0.25;
      const double u = 0.8, r = 0.4;
      auto F = [&](double uu, double rr) {
        const double gamma = std::sqrt(uu);
        return free_energy({gamma, rr / gamma, q, alpha, S, beta});
      };
      const double h = 1e-5;
      const double dF_du = (F(u + h, r) - F(u - h, r)) / (2 * h);
      const double dF_dr = (F(u, r + h) - F(u, r - h)) / (2 * h);
      const double D = q * q - u;
      const auto g = stationarity_residual(std::sqrt(u), r / std::sqrt(u), alpha, S, q, beta);
      CHECK(dF_dr == doctest::Approx(g(0) / D).epsilon(1e-7));
      CHECK(dF_du == doctest::Approx(g(1) / (2 * D * D)).epsilon(1e-7));
    }
  }
}

TEST_CASE("stationary point of -beta f is a saddle in (gamma, R)") {
  const double alpha = 1.0, S = 0.25, q = 3.0, beta = 1e6;
  const auto eq = equilibrium(alpha, S);
  const double g = std::sqrt(eq.gamma_sq);
  const double R = eq.gammaR / g;
  auto F = [&](double x, double y) { return free_energy({x, y, q, alpha, S, beta}); };
  const double h = 1e-3;
  const double fxx = (F(g + h, R) - 2 * F(g, R) + F(g - h, R)) / (h * h);
  const double fyy = (F(g, R + h) - 2 * F(g, R) + F(g, R - h)) / (h * h);
  const double fxy = (F(g + h, R + h) - F(g + h, R - h) - F(g - h, R + h) + F(g - h, R - h)) / (4 * h * h);
  CHECK(fxx * fyy - fxy * fxy < 0);
}

TEST_CASE("numerical equilibrium reproduces the closed form") {
  for (double alpha : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 1.1, 1.3, 1.5, 1.7, 1.9}) {
    const double S = 0.25;
    const auto closed = equilibrium(alpha, S);
    const auto num = solve_equilibrium(alpha, S);
    CHECK(std::abs(num.gamma * num.gamma - closed.gamma_sq) <= 1e-4);
    CHECK(std::abs(num.gamma * num.R - closed.gammaR) <= 1e-4);
    const double eps = gen_integral(num.gamma, num.R, ActivationKind::Identity, ActivationKind::ReLU);
    CHECK(std::abs(gen_integral(std::sqrt(closed.gamma_sq), closed.gammaR / std::sqrt(closed.gamma_sq),
                                ActivationKind::Identity, ActivationKind::ReLU) -
                   eps_relu_ord(alpha, S)) <= 1e-12);
    CHECK(std::abs(eps - eps_relu_ord(alpha, S)) <= 1e-6);
  }
}

TEST_CASE("finite-beta equilibrium is a stationary point of the literal free energy") {
  const double alpha = 1.0, S = 0.25, q = 3.0, beta = 1e3;
  const auto num = solve_equilibrium(alpha, S, q, beta);
  auto F = [&](double x, double y) { return free_energy({x, y, q, alpha, S, beta}); };
  const double h = 1e-6;
  const double gx = (F(num.gamma + h, num.R) - F(num.gamma - h, num.R)) / (2 * h);
  const double gy = (F(num.gamma, num.R + h) - F(num.gamma, num.R - h)) / (2 * h);
  CHECK(std::abs(gx) < 1e-5);
  CHECK(std::abs(gy) < 1e-5);
  // As beta grows the solution approaches the a = 1 closed form.
  const auto closed = equilibrium(alpha, S);
  CHECK(std::abs(num.gamma * num.R - closed.gammaR) < 1e-3);
}

TEST_CASE("equilibrium closed form") {
  const auto e = equilibrium(1.0, 0.25);
  CHECK(e.gamma_sq == doctest::Approx(0.75));
  CHECK(e.gammaR == doctest::Approx(0.5));
  CHECK(e.eps == doctest::Approx(0.875));
  const auto z = equilibrium(0.0, 0.4);
  CHECK(z.gamma_sq == 0.0);
  CHECK(z.eps == 1.0);
  CHECK_THROWS_AS(equilibrium(2.0, 0.25), PoleError);
  const auto none = solve_equilibrium(0.0, 0.0);
  CHECK(none.gamma * none.gamma < 1e-4);
  CHECK(gen_integral(none.gamma, none.R, ActivationKind::Identity, ActivationKind::ReLU) ==
        doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("curve CSV round-trips") {
  std::vector<GenCurvePoint> pts{{0.25, eps_id_ord(0.25, 0.25), MethodKind::VanillaSGD, 0.25, 0.0},
                                 {0.5, eps_id_wn(0.5, 1.0 / 64, 0.25), MethodKind::WNGammaDecay, 0.25, 1.0 / 64}};
  std::istringstream in(curve_csv(pts));
  std::string line;
  std::getline(in, line);
  CHECK(line == "alpha,eps,method,S,zeta");
  for (const auto& p : pts) {
    REQUIRE(std::getline(in, line));
    double a, e, s, z;
    char method[32];
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%31[^,],%lf,%lf", &a, &e, method, &s, &z) == 5);
    CHECK(a == p.alpha);
    CHECK(e == p.eps);
    CHECK(parse_method(method) == p.method);
    CHECK(s == p.S);
    CHECK(z == p.zeta);
  }
}
