#include "bnlab/core.hpp"

namespace bnlab {

std::string_view to_string(ActivationKind act) {
  switch (act) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::ReLU: return "relu";
  }
  return "?";
}

std::string_view to_string(MethodKind method) {
  switch (method) {
    case MethodKind::BN: return "bn";
    case MethodKind::WN: return "wn";
    case MethodKind::WNGammaDecay: return "wn_gamma_decay";
    case MethodKind::VanillaSGD: return "sgd";
  }
  return "?";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return ActivationKind::Identity;
  if (name == "relu") return ActivationKind::ReLU;
  throw DomainError("unknown activation '" + std::string(name) + "'");
}

MethodKind parse_method(std::string_view name) {
  if (name == "bn") return MethodKind::BN;
  if (name == "wn") return MethodKind::WN;
  if (name == "wn_gamma_decay") return MethodKind::WNGammaDecay;
  if (name == "sgd" || name == "vanilla_sgd") return MethodKind::VanillaSGD;
  throw DomainError("unknown method '" + std::string(name) + "'");
}

}  // namespace bnlab
