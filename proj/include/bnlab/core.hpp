#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bnlab {

/// Raised when an argument lies outside the domain of a closed form or update rule.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised by curve evaluators exactly at a divergence of the theory (alpha = 1 or 2).
class PoleError : public DomainError {
 public:
  PoleError(const std::string& what, double pole) : DomainError(what), pole_(pole) {}
  double pole() const noexcept { return pole_; }

 private:
  double pole_;
};

/// Raised when a sample has no spread (zero variance).
class DegenerateError : public DomainError {
 public:
  using DomainError::DomainError;
};

enum class ActivationKind { Identity, ReLU };

enum class MethodKind { BN, WN, WNGammaDecay, VanillaSGD };

std::string_view to_string(ActivationKind act);
std::string_view to_string(MethodKind method);
ActivationKind parse_activation(std::string_view name);
MethodKind parse_method(std::string_view name);

template <typename Scalar>
Scalar activate(ActivationKind act, Scalar x) {
  return act == ActivationKind::ReLU ? (x > Scalar(0) ? x : Scalar(0)) : x;
}

// g'(0) = 0 for ReLU.
template <typename Scalar>
Scalar activate_derivative(ActivationKind act, Scalar x) {
  if (act == ActivationKind::Identity) return Scalar(1);
  return x > Scalar(0) ? Scalar(1) : Scalar(0);
}

/// Order parameters of the student: Q (= gamma) is the length of the normalized weight
/// vector, R its overlap with the teacher, L the length of the raw weight vector.
template <typename Scalar>
struct BasicOrderState {
  Scalar Q{1};
  Scalar R{0};
  Scalar L{1};

  bool valid() const {
    return Q > Scalar(0) && L > Scalar(0) && R >= Scalar(-1) && R <= Scalar(1) &&
           std::isfinite(static_cast<double>(Q)) && std::isfinite(static_cast<double>(L));
  }
};

using OrderState = BasicOrderState<double>;

using Seed = std::uint64_t;

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace bnlab
