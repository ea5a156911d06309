#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bnlab/core.hpp"

namespace bnlab {

/// One point of a generalization-error curve.
struct GenCurvePoint {
  double alpha = 0;
  double eps = 0;
  MethodKind method = MethodKind::VanillaSGD;
  double S = 0;
  double zeta = 0;
};

/// Arguments of the replica free energy for a ReLU student and a noisy linear teacher.
/// `beta_inv_temp` is the inverse temperature, not the BN shift.
struct FreeEnergyParams {
  double gamma = 0;
  double R = 0;
  double q = 10;
  double alpha = 0;
  double S = 0;
  double beta_inv_temp = 1e6;
};

/// Equilibrium order parameters and the resulting generalization error.
struct Equilibrium {
  double gamma_sq = 0;
  double gammaR = 0;
  double eps = 0;
};

/// Linear student, linear teacher, no regularization:
/// 1 - alpha + alpha S / (1 - alpha) for alpha < 1 and S / (alpha - 1) for alpha > 1.
/// Throws PoleError at alpha = 1.
double eps_id_ord(double alpha, double S);

/// ReLU student, linear teacher, no regularization: 1 - alpha/4 + alpha S / (2 (2 - alpha)),
/// for 0 <= alpha < 2. Throws PoleError at alpha = 2.
double eps_relu_ord(double alpha, double S);

/// The G function of the gamma-decay curve (see eps_id_wn). Requires zeta > 0, alpha >= 0.
double wn_G(double alpha, double zeta);

/// Linear student with gamma decay zeta:
///   eps = S d(zeta G)/d zeta - zeta^2 dG/d zeta,
///   G = [1 - alpha - zeta + sqrt((zeta + (1 + sqrt alpha)^2)(zeta + (1 - sqrt alpha)^2))] / (2 zeta),
/// with S standing in for the injected-noise variance. Evaluated with the analytic derivatives.
double eps_id_wn(double alpha, double zeta, double S);

/// Same quantity with central differences of G (h = 1e-6 zeta); a runtime cross-check.
double eps_id_wn_fd(double alpha, double zeta, double S);

/// -beta f exactly as the replica calculation gives it:
///   (gamma^2 - gamma^2 R^2) / (2 D) + ln(D) / 2 - (alpha/4) ln(1 + beta D)
///   - alpha beta (1 - 2 gamma R + gamma^2 + S) / (4 (1 + beta D)) - alpha beta / 4 - alpha beta S / 4,
/// with D = q^2 - gamma^2. Throws DomainError if D <= 0 or beta <= 0.
double free_energy(const FreeEnergyParams& p);

/// The `a` of the saddle-point equations, (1 + beta D) / (beta D); 1 for beta = inf.
double saddle_a(double gamma, double q, double beta_inv_temp);

/// Rescaled gradient of -beta f in (u, r) = (gamma^2, gamma R):
///   g_r = -r + alpha / (2a),   g_u = (u - r^2) - alpha (1 - 2r + u + S) / (2 a^2).
/// Both vanish exactly at the stationary point of free_energy (beta = inf selects a = 1).
Eigen::Vector2d stationarity_residual(double gamma, double R, double alpha, double S, double q = 10,
                                      double beta_inv_temp = std::numeric_limits<double>::infinity());

struct EquilibriumSearch {
  double gamma = 0;
  double R = 0;
  double residual = 0;
  int iterations = 0;
  bool converged = false;
};

/// Bounded Nelder-Mead over (gamma, R), R in [0, 1], gamma in (0, q), driving the squared
/// stationarity residual to zero. The stationary point of -beta f is a saddle in
/// (gamma, R), so the squared gradient is the quantity minimized.
EquilibriumSearch solve_equilibrium(double alpha, double S, double q = 10,
                                    double beta_inv_temp = std::numeric_limits<double>::infinity());

/// Closed-form equilibrium at a = 1: gamma^2 = alpha/2 + alpha S / (2 - alpha), gamma R = alpha/2,
/// eps = eps_relu_ord. Requires 0 <= alpha < 2; PoleError at 2.
Equilibrium equilibrium(double alpha, double S);

/// CSV with header alpha,eps,method,S,zeta.
std::string curve_csv(const std::vector<GenCurvePoint>& points);

}  // namespace bnlab
