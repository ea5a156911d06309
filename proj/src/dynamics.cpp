#include "bnlab/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "bnlab/io.hpp"

namespace bnlab {

namespace {

GaussIntegrals integrals_at(double Q, double R, const DynamicsParams& params) {
  const OrderState st{Q, R, 1.0};
  if (params.integrals == IntegralMode::Quadrature) return quadrature_integrals(st, params.act);
  return closed_integrals(st, params.act);
}

bool decays_gamma(MethodKind method) { return method == MethodKind::BN || method == MethodKind::WNGammaDecay; }

// Raw right-hand side; R is clamped to [-1, 1] so RK4 stages may overshoot harmlessly.
OdeRates rates(double Q, double R, double L, const DynamicsParams& p) {
  R = std::clamp(R, -1.0, 1.0);
  const GaussIntegrals g = integrals_at(Q, R, p);
  const double eta = p.eta;
  OdeRates out;
  if (p.method == MethodKind::VanillaSGD) {
    const double dq1 = eta * g.I1 / Q;
    const double dq2 = eta * eta * g.I2 / (2 * Q);
    out.first << dq1, eta * (Q * g.I3 - R * g.I1) / (Q * Q), dq1;
    out.second << dq2, -eta * eta * R * g.I2 / (2 * Q * Q), dq2;
    return out;
  }
  const double zeta = decays_gamma(p.method) ? p.zeta : 0.0;
  const double L2 = L * L;
  out.first << eta * g.I1 / Q - eta * zeta * Q, eta * (Q * g.I3 - R * g.I1) / L2, 0.0;
  out.second << 0.0, -eta * eta * Q * Q * R * g.I2 / (2 * L2 * L2), eta * eta * Q * Q * g.I2 / (2 * L2 * L);
  return out;
}

bool finite_and_bounded(const Eigen::Vector3d& x) {
  return x.allFinite() && x(0) > 0 && x(2) > 0 && x(0) <= kDivergenceThreshold && x(2) <= kDivergenceThreshold;
}

}  // namespace

OdeRates ode_rhs(const OrderState& state, const DynamicsParams& params) {
  if (!(state.Q > 0)) throw DomainError("ode_rhs requires Q > 0");
  if (!(state.L > 0)) throw DomainError("ode_rhs requires L > 0");
  detail::check_overlap(state.R);
  return rates(state.Q, state.R, state.L, params);
}

Trajectory integrate(const OrderState& initial, const DynamicsParams& params, double t_end, double dt,
                     int record_stride) {
  if (!(dt > 0) || !(t_end > 0)) throw DomainError("integrate requires dt > 0 and t_end > 0");
  if (!(params.eta > 0) || !(params.zeta >= 0)) throw DomainError("integrate requires eta > 0 and zeta >= 0");
  if (record_stride < 1) throw DomainError("record_stride must be >= 1");
  if (!initial.valid()) throw DomainError("initial state violates Q > 0, L > 0, |R| <= 1");

  const auto steps = static_cast<long long>(std::ceil(t_end / dt - 1e-9));
  const double h = t_end / static_cast<double>(steps);
  const bool tied = params.method == MethodKind::VanillaSGD;

  Eigen::Vector3d x(initial.Q, initial.R, tied ? initial.Q : initial.L);
  auto f = [&](const Eigen::Vector3d& y) { return rates(y(0), y(1), y(2), params).total(); };

  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back({x(0), x(1), x(2)});
  for (long long k = 1; k <= steps; ++k) {
    const Eigen::Vector3d k1 = f(x);
    const Eigen::Vector3d k2 = f(x + 0.5 * h * k1);
    const Eigen::Vector3d k3 = f(x + 0.5 * h * k2);
    const Eigen::Vector3d k4 = f(x + h * k3);
    x += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    x(1) = std::clamp(x(1), -1.0, 1.0);
    if (tied) x(2) = x(0);
    const bool ok = finite_and_bounded(x);
    if (!ok || k % record_stride == 0 || k == steps) {
      traj.times.push_back(static_cast<double>(k) * h);
      traj.states.push_back({x(0), x(1), x(2)});
    }
    if (!ok) {
      traj.diverged = true;
      break;
    }
  }
  return traj;
}

OrderState fixed_point(const DynamicsParams& params, double L0) {
  if (!(L0 > 0)) throw DomainError("L0 must be positive");
  switch (params.method) {
    case MethodKind::BN:
    case MethodKind::WNGammaDecay: {
      const double Q0 = params.act == ActivationKind::ReLU ? 1 / (2 * params.zeta + 1) : 1 / (1 + params.zeta);
      return {Q0, 1.0, L0};
    }
    case MethodKind::WN: return {1.0, 1.0, L0};
    case MethodKind::VanillaSGD: return {1.0, 1.0, 1.0};
  }
  return {};
}

LrAnalysis lr_analysis(const DynamicsParams& params, double L0) {
  LrAnalysis out;
  out.fixed_point = fixed_point(params, L0);
  const double Q0 = out.fixed_point.Q;
  const double L = out.fixed_point.L;
  const double zeta = decays_gamma(params.method) ? params.zeta : 0.0;
  const double eta = params.eta;
  const IntegralPartials p = closed_partials(out.fixed_point, params.act);

  // At the fixed point I1 = zeta Q0^2, so d/dQ (eta I1/Q - eta zeta Q) = eta (dI1/dQ / Q0 - 2 zeta).
  out.lambda_Q = eta * (p.dI1_dQ / Q0 - 2 * zeta);
  const double drift = Q0 * p.dI3_dR - p.dI1_dR;
  out.lambda_R = (eta / (L * L)) * (drift - zeta * Q0 * Q0) - eta * eta * Q0 * Q0 / (2 * L * L * L * L) * p.dI2_dR;
  out.lambda_L = 0.0;
  out.eta_max = 2 * (drift / Q0 - zeta * Q0) / p.dI2_dR;
  out.eta_eff = eta * Q0 / (L * L);
  out.stable = out.lambda_R < 0;
  return out;
}

std::string trajectory_csv(const Trajectory& trajectory) {
  CsvWriter csv({"t", "Q", "R", "L"});
  for (std::size_t k = 0; k < trajectory.times.size(); ++k) {
    const auto& s = trajectory.states[k];
    csv.cell(trajectory.times[k]).cell(s.Q).cell(s.R).cell(s.L);
    csv.end_row();
  }
  return csv.str();
}

}  // namespace bnlab
