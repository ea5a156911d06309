#include "bnlab/statmech.hpp"

#include <cmath>

#include "bnlab/io.hpp"
#include "bnlab/nelder_mead.hpp"

namespace bnlab {

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and >= 0");
}

void check_noise(double S) {
  if (!(S >= 0) || !std::isfinite(S)) throw DomainError("S must be finite and >= 0");
}

void check_wn_args(double alpha, double zeta) {
  check_alpha(alpha);
  if (!(zeta > 0) || !std::isfinite(zeta)) throw DomainError("gamma decay zeta must be > 0");
}

// (zeta + (1 + sqrt a)^2)(zeta + (1 - sqrt a)^2), expanded so no sqrt(alpha) round-off enters.
double wn_radicand(double alpha, double zeta) {
  const double p = zeta * zeta + 2 * zeta * (1 + alpha) + (1 - alpha) * (1 - alpha);
  if (p < 0) throw DomainError("negative radicand in G");
  return p;
}

}  // namespace

double eps_id_ord(double alpha, double S) {
  check_alpha(alpha);
  check_noise(S);
  if (alpha == 1) throw PoleError("eps_id_ord diverges at alpha = 1", 1.0);
  if (alpha < 1) return 1 - alpha + alpha * S / (1 - alpha);
  return S / (alpha - 1);
}

double eps_relu_ord(double alpha, double S) {
  check_alpha(alpha);
  check_noise(S);
  if (alpha == 2) throw PoleError("eps_relu_ord diverges at alpha = 2", 2.0);
  if (alpha > 2) throw DomainError("eps_relu_ord requires alpha < 2");
  return 1 - alpha / 4 + alpha * S / (2 * (2 - alpha));
}

double wn_G(double alpha, double zeta) {
  check_wn_args(alpha, zeta);
  return (1 - alpha - zeta + std::sqrt(wn_radicand(alpha, zeta))) / (2 * zeta);
}

double eps_id_wn(double alpha, double zeta, double S) {
  check_wn_args(alpha, zeta);
  check_noise(S);
  const double root = std::sqrt(wn_radicand(alpha, zeta));
  // zeta G = (1 - alpha - zeta + root) / 2 and d(zeta G)/d zeta = (-1 + (zeta + 1 + alpha) / root) / 2.
  // Using zeta^2 G' = zeta d(zeta G)/d zeta - zeta G:
  //   eps = (S - zeta) d(zeta G)/d zeta + zeta G.
  const double d_zg = (-1 + (zeta + 1 + alpha) / root) / 2;
  const double zg = (1 - alpha - zeta + root) / 2;
  return (S - zeta) * d_zg + zg;
}

double eps_id_wn_fd(double alpha, double zeta, double S) {
  check_wn_args(alpha, zeta);
  check_noise(S);
  const double h = 1e-6 * zeta;
  const double gp = wn_G(alpha, zeta + h);
  const double gm = wn_G(alpha, zeta - h);
  const double dG = (gp - gm) / (2 * h);
  const double d_zg = ((zeta + h) * gp - (zeta - h) * gm) / (2 * h);
  return S * d_zg - zeta * zeta * dG;
}

double free_energy(const FreeEnergyParams& p) {
  const double D = p.q * p.q - p.gamma * p.gamma;
  if (!(D > 0)) throw DomainError("free_energy requires q^2 > gamma^2");
  if (!(p.beta_inv_temp > 0)) throw DomainError("free_energy requires beta > 0");
  if (!(std::abs(p.R) <= 1)) throw DomainError("free_energy requires |R| <= 1");
  const double g2 = p.gamma * p.gamma;
  const double b = p.beta_inv_temp;
  const double a = p.alpha;
  return 0.5 * (g2 - g2 * p.R * p.R) / D + 0.5 * std::log(D) - a / 4 * std::log1p(b * D) -
         a * b * (1 - 2 * p.gamma * p.R + g2 + p.S) / (4 * (1 + b * D)) - a * b / 4 - a * b * p.S / 4;
}

double saddle_a(double gamma, double q, double beta_inv_temp) {
  const double D = q * q - gamma * gamma;
  if (!(D > 0)) throw DomainError("saddle_a requires q^2 > gamma^2");
  if (std::isinf(beta_inv_temp)) return 1.0;
  return 1 + 1 / (beta_inv_temp * D);
}

Eigen::Vector2d stationarity_residual(double gamma, double R, double alpha, double S, double q,
                                      double beta_inv_temp) {
  const double a = saddle_a(gamma, q, beta_inv_temp);
  const double u = gamma * gamma;
  const double r = gamma * R;
  return {-r + alpha / (2 * a), (u - r * r) - alpha * (1 - 2 * r + u + S) / (2 * a * a)};
}

EquilibriumSearch solve_equilibrium(double alpha, double S, double q, double beta_inv_temp) {
  check_alpha(alpha);
  check_noise(S);
  if (!(q > 0)) throw DomainError("q must be positive");
  const double inf = std::numeric_limits<double>::infinity();
  const std::function<double(const Eigen::Vector2d&)> objective = [&](const Eigen::Vector2d& x) {
    const double gamma = x(0);
    const double R = x(1);
    if (!(gamma > 0) || !(gamma < q) || !(R >= 0) || !(R <= 1)) return inf;
    return stationarity_residual(gamma, R, alpha, S, q, beta_inv_temp).squaredNorm();
  };
  NelderMeadOptions opt;
  opt.initial_step = 0.2;
  EquilibriumSearch best;
  best.residual = inf;
  // A few restarts guard against the simplex collapsing onto the R = 0 or R = 1 walls.
  for (const Eigen::Vector2d& start : {Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(std::min(1.5, 0.8 * q), 0.3),
                                       Eigen::Vector2d(0.2, 0.8)}) {
    const auto res = nelder_mead<double, 2>(objective, start, opt);
    if (res.value < best.residual) {
      best.gamma = res.x(0);
      best.R = res.x(1);
      best.residual = res.value;
      best.iterations = res.iterations;
      best.converged = res.converged;
    }
  }
  return best;
}

Equilibrium equilibrium(double alpha, double S) {
  check_alpha(alpha);
  check_noise(S);
  if (alpha == 2) throw PoleError("equilibrium diverges at alpha = 2", 2.0);
  if (alpha > 2) throw DomainError("equilibrium requires alpha < 2");
  Equilibrium out;
  out.gamma_sq = alpha / 2 + alpha * S / (2 - alpha);
  out.gammaR = alpha / 2;
  out.eps = eps_relu_ord(alpha, S);
  return out;
}

std::string curve_csv(const std::vector<GenCurvePoint>& points) {
  CsvWriter csv({"alpha", "eps", "method", "S", "zeta"});
  for (const auto& p : points) {
    csv.cell(p.alpha).cell(p.eps).cell(to_string(p.method)).cell(p.S).cell(p.zeta);
    csv.end_row();
  }
  return csv.str();
}

}  // namespace bnlab
