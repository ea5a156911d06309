#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "bnlab/core.hpp"
#include "bnlab/gauss_kernels.hpp"

namespace bnlab {

/// Learning rate, gamma decay and model selection for the order-parameter ODE.
/// WNGammaDecay shares the BN dynamics; WN and VanillaSGD ignore zeta.
struct DynamicsParams {
  double eta = 0.05;
  double zeta = 0.0;
  ActivationKind act = ActivationKind::ReLU;
  MethodKind method = MethodKind::BN;
  IntegralMode integrals = IntegralMode::Closed;
};

/// Time derivatives (dQ/dt, dR/dt, dL/dt) split into the O(eta) and O(eta^2) parts.
struct OdeRates {
  Eigen::Vector3d first = Eigen::Vector3d::Zero();
  Eigen::Vector3d second = Eigen::Vector3d::Zero();

  Eigen::Vector3d total() const { return first + second; }
};

/// Order-parameter trajectory sampled on t = j/N. `diverged` marks early termination.
struct Trajectory {
  std::vector<double> times;
  std::vector<OrderState> states;
  bool diverged = false;

  const OrderState& final_state() const { return states.back(); }
};

/// Linearization at the fixed point. lambda_Q carries the factor eta.
struct LrAnalysis {
  double lambda_Q = 0;
  double lambda_R = 0;
  double lambda_L = 0;
  double eta_max = 0;
  double eta_eff = 0;
  bool stable = false;
  OrderState fixed_point;

  double lambda_Q_over_eta(double eta) const { return lambda_Q / eta; }
};

inline constexpr double kDivergenceThreshold = 1e6;

/// Evaluates the ODE right-hand side.
///   dQ/dt = eta I1 / Q - eta zeta Q
///   dR/dt = eta (Q I3 - R I1) / L^2 - eta^2 Q^2 R I2 / (2 L^4)
///   dL/dt = eta^2 Q^2 I2 / (2 L^3)
/// For vanilla SGD there is no separate scale, so L is tied to Q and
/// dQ/dt = dL/dt = eta I1 / Q + eta^2 I2 / (2 Q).
OdeRates ode_rhs(const OrderState& state, const DynamicsParams& params);

/// Fixed-step RK4 from `initial` to `t_end`. The step count is ceil(t_end / dt) and the
/// step is shrunk so the grid ends exactly at t_end. Every `record_stride`-th state is
/// kept (the final state always is). Stops early with diverged = true once Q or L leaves
/// (0, 1e6] or becomes non-finite.
Trajectory integrate(const OrderState& initial, const DynamicsParams& params, double t_end, double dt = 0.01,
                     int record_stride = 1);

/// First-order fixed point. BN/WNGammaDecay: Q0 = 1/(2 zeta + 1) for ReLU and 1/(1 + zeta)
/// for the identity, R0 = 1, L0 free. WN: (1, 1, L0). VanillaSGD: (1, 1, 1).
OrderState fixed_point(const DynamicsParams& params, double L0 = 1.0);

/// Eigenvalues of the first-order Jacobian at the fixed point plus the maximum and effective
/// learning rates, with lambda_R = (dI2/dR) (eta Q0 / (2 L0^2)) (eta_max - eta_eff).
LrAnalysis lr_analysis(const DynamicsParams& params, double L0 = 1.0);

/// CSV with header t,Q,R,L and 17 significant digits.
std::string trajectory_csv(const Trajectory& trajectory);

}  // namespace bnlab
