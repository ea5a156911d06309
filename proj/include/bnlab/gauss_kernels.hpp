#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include <Eigen/Core>

#include "bnlab/core.hpp"

namespace bnlab {

/// The three Gaussian expectations that drive the order-parameter dynamics:
/// I1 = E[delta s], I2 = E[delta^2], I3 = E[delta t], with
/// delta = g'(s) (g(t) - g(s)) and (s, t) ~ N(0, [[Q^2, QR], [QR, 1]]).
struct GaussIntegrals {
  double I1 = 0;
  double I2 = 0;
  double I3 = 0;
};

/// Partial derivatives of (I1, I2, I3) with respect to Q and R.
struct IntegralPartials {
  double dI1_dQ = 0, dI1_dR = 0;
  double dI2_dQ = 0, dI2_dR = 0;
  double dI3_dQ = 0, dI3_dR = 0;
};

struct IntegralEstimate {
  GaussIntegrals mean;
  GaussIntegrals std_error;  // zero for the deterministic quadrature
};

enum class IntegralMode { Closed, Quadrature };

namespace detail {

template <typename Scalar>
void check_overlap(Scalar R) {
  using std::abs;
  if (!(abs(R) <= Scalar(1))) throw DomainError("overlap R must satisfy |R| <= 1, got " + std::to_string(static_cast<double>(R)));
}

// pi R + 2 sqrt(1 - R^2) + 2 R asin R  =  4 pi E[s t 1{s>0, t>0}] / Q
template <typename Scalar>
Scalar relu_cross_bracket(Scalar R) {
  using std::asin;
  using std::sqrt;
  const Scalar pi = Scalar(kPi);
  return pi * R + Scalar(2) * sqrt(Scalar(1) - R * R) + Scalar(2) * R * asin(R);
}

// pi + 2 R sqrt(1 - R^2) + 2 asin R  =  4 pi E[t^2 1{s>0, t>0}]
template <typename Scalar>
Scalar relu_square_bracket(Scalar R) {
  using std::asin;
  using std::sqrt;
  const Scalar pi = Scalar(kPi);
  return pi + Scalar(2) * R * sqrt(Scalar(1) - R * R) + Scalar(2) * asin(R);
}

}  // namespace detail

/// ReLU closed form of I1.
template <typename Scalar>
Scalar closed_i1(Scalar Q, Scalar R) {
  detail::check_overlap(R);
  const Scalar four_pi = Scalar(4 * kPi);
  return Q * detail::relu_cross_bracket(R) / four_pi - Q * Q / Scalar(2);
}

/// ReLU closed form of I2 (exact bivariate reduction, x^T x replaced by its mean 1).
template <typename Scalar>
Scalar closed_i2(Scalar Q, Scalar R) {
  detail::check_overlap(R);
  const Scalar pi = Scalar(kPi);
  return Q * Q / Scalar(2) + detail::relu_square_bracket(R) / (Scalar(4) * pi) -
         Q * detail::relu_cross_bracket(R) / (Scalar(2) * pi);
}

/// ReLU closed form of I3.
template <typename Scalar>
Scalar closed_i3(Scalar Q, Scalar R) {
  detail::check_overlap(R);
  const Scalar four_pi = Scalar(4 * kPi);
  return detail::relu_square_bracket(R) / four_pi - Q * R / Scalar(2);
}

/// Closed forms for either activation. The identity case is a polynomial:
/// I1 = QR - Q^2, I2 = 1 - 2QR + Q^2, I3 = 1 - QR.
template <typename Scalar>
GaussIntegrals closed_integrals(const BasicOrderState<Scalar>& state, ActivationKind act) {
  const Scalar Q = state.Q;
  const Scalar R = state.R;
  detail::check_overlap(R);
  if (act == ActivationKind::ReLU) {
    return {static_cast<double>(closed_i1(Q, R)), static_cast<double>(closed_i2(Q, R)),
            static_cast<double>(closed_i3(Q, R))};
  }
  return {static_cast<double>(Q * R - Q * Q), static_cast<double>(Scalar(1) - Scalar(2) * Q * R + Q * Q),
          static_cast<double>(Scalar(1) - Q * R)};
}

/// Analytic partial derivatives of the closed forms. Finite at R = +-1.
IntegralPartials closed_partials(const OrderState& state, ActivationKind act);

/// Monte Carlo estimate of (I1, I2, I3) from n_samples draws of (s, t); n_samples == 0
/// selects the deterministic quadrature instead. Requires n_samples >= 1e4 otherwise.
IntegralEstimate mc_integrals(const OrderState& state, ActivationKind act, std::size_t n_samples, Seed seed);

/// Deterministic quadrature of (I1, I2, I3), any activation.
GaussIntegrals quadrature_integrals(const OrderState& state, ActivationKind act, int order = 64);

/// Generalization error of a student with order parameters (gamma, R) against a
/// noiseless teacher: E[(g*(h1) - g(gamma R h1 + gamma sqrt(1-R^2) h2))^2].
/// Only the linear teacher is supported.
double gen_integral(double gamma, double R, ActivationKind teacher, ActivationKind student,
                    IntegralMode mode = IntegralMode::Closed);

// ---------------------------------------------------------------------------
// Quadrature machinery.

/// Gauss rule nodes and weights.
struct GaussRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

/// Gauss-Legendre on [-1, 1].
const GaussRule& gauss_legendre(int order);

/// Gauss-Laguerre for weight exp(-x) on [0, inf).
const GaussRule& gauss_laguerre(int order);

/// E[f(u, v)] for independent standard normals u, v, where f is smooth on every
/// sector bounded by the lines {n . (u, v) = 0} for the given normals. Integrates in
/// polar coordinates with the angular range split at each such line.
double gaussian_expectation_2d(const std::function<double(double, double)>& f,
                               std::span<const Eigen::Vector2d> kink_normals, int angular_order = 64,
                               int radial_order = 32);

}  // namespace bnlab
