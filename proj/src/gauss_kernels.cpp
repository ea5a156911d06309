#include "bnlab/gauss_kernels.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <mutex>
#include <vector>

#include <Eigen/Eigenvalues>

#include "bnlab/rng.hpp"

namespace bnlab {

IntegralPartials closed_partials(const OrderState& state, ActivationKind act) {
  const double Q = state.Q;
  const double R = state.R;
  detail::check_overlap(R);
  IntegralPartials p;
  if (act == ActivationKind::Identity) {
    p.dI1_dQ = R - 2 * Q;
    p.dI1_dR = Q;
    p.dI2_dQ = 2 * Q - 2 * R;
    p.dI2_dR = -2 * Q;
    p.dI3_dQ = -R;
    p.dI3_dR = -Q;
    return p;
  }
  const double root = std::sqrt(std::max(0.0, 1 - R * R));
  const double cross = detail::relu_cross_bracket(R);
  // d/dR of the brackets; both stay finite at |R| = 1.
  const double cross_dR = kPi + 2 * std::asin(R);
  const double square_dR = 4 * root;
  p.dI1_dQ = cross / (4 * kPi) - Q;
  p.dI1_dR = Q * cross_dR / (4 * kPi);
  p.dI2_dQ = Q - cross / (2 * kPi);
  p.dI2_dR = square_dR / (4 * kPi) - Q * cross_dR / (2 * kPi);
  p.dI3_dQ = -R / 2;
  p.dI3_dR = square_dR / (4 * kPi) - Q / 2;
  return p;
}

namespace {

GaussRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag, double mu0) {
  const Eigen::Index n = diag.size();
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  jacobi.diagonal() = diag;
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    jacobi(k, k + 1) = offdiag(k);
    jacobi(k + 1, k) = offdiag(k);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  GaussRule rule;
  rule.nodes = solver.eigenvalues();
  rule.weights = mu0 * solver.eigenvectors().row(0).transpose().array().square();
  return rule;
}

template <typename Builder>
const GaussRule& cached_rule(std::map<int, GaussRule>& cache, std::mutex& mutex, int order, Builder build) {
  if (order < 1) throw DomainError("quadrature order must be positive");
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, build(order)).first;
  return it->second;
}

struct Accumulator {
  double mean = 0;
  double m2 = 0;
  std::size_t n = 0;

  void push(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double std_error() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0; }
};

}  // namespace

const GaussRule& gauss_legendre(int order) {
  static std::map<int, GaussRule> cache;
  static std::mutex mutex;
  return cached_rule(cache, mutex, order, [](int n) {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd off(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) off(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
    return golub_welsch(diag, off, 2.0);
  });
}

const GaussRule& gauss_laguerre(int order) {
  static std::map<int, GaussRule> cache;
  static std::mutex mutex;
  return cached_rule(cache, mutex, order, [](int n) {
    Eigen::VectorXd diag(n);
    Eigen::VectorXd off(std::max(n - 1, 0));
    for (int k = 0; k < n; ++k) diag(k) = 2.0 * k + 1.0;
    for (int k = 1; k < n; ++k) off(k - 1) = k;
    return golub_welsch(diag, off, 1.0);
  });
}

double gaussian_expectation_2d(const std::function<double(double, double)>& f,
                               std::span<const Eigen::Vector2d> kink_normals, int angular_order,
                               int radial_order) {
  constexpr double two_pi = 2 * kPi;
  std::vector<double> cuts{0.0, two_pi};
  for (const auto& n : kink_normals) {
    if (n.norm() == 0) continue;
    const double base = std::atan2(n.y(), n.x());
    for (double angle : {base + kPi / 2, base - kPi / 2}) {
      angle = std::fmod(angle, two_pi);
      if (angle < 0) angle += two_pi;
      cuts.push_back(angle);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return std::abs(a - b) < 1e-14; }),
             cuts.end());

  const GaussRule& ang = gauss_legendre(angular_order);
  const GaussRule& rad = gauss_laguerre(radial_order);

  // E[f] = (1 / 2pi) int dtheta int_0^inf f(r cos, r sin) r exp(-r^2/2) dr, and with
  // rho = r^2 / 2 the radial factor becomes a Laguerre integral.
  double total = 0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double lo = cuts[k];
    const double hi = cuts[k + 1];
    if (hi - lo < 1e-15) continue;
    const double half = (hi - lo) / 2;
    const double mid = (hi + lo) / 2;
    double sector = 0;
    for (Eigen::Index i = 0; i < ang.nodes.size(); ++i) {
      const double theta = mid + half * ang.nodes(i);
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      double radial = 0;
      for (Eigen::Index j = 0; j < rad.nodes.size(); ++j) {
        const double r = std::sqrt(2 * rad.nodes(j));
        radial += rad.weights(j) * f(r * c, r * s);
      }
      sector += ang.weights(i) * radial;
    }
    total += half * sector;
  }
  return total / two_pi;
}

GaussIntegrals quadrature_integrals(const OrderState& state, ActivationKind act, int order) {
  const double Q = state.Q;
  const double R = state.R;
  detail::check_overlap(R);
  const double root = std::sqrt(std::max(0.0, 1 - R * R));
  // s = Q u, t = R u + sqrt(1 - R^2) v.
  const std::array<Eigen::Vector2d, 2> kinks{Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(R, root)};
  auto delta = [&](double u, double v) {
    const double s = Q * u;
    const double t = R * u + root * v;
    return activate_derivative(act, s) * (activate(act, t) - activate(act, s));
  };
  const std::span<const Eigen::Vector2d> normals =
      act == ActivationKind::ReLU ? std::span<const Eigen::Vector2d>(kinks) : std::span<const Eigen::Vector2d>();
  GaussIntegrals out;
  out.I1 = gaussian_expectation_2d([&](double u, double v) { return delta(u, v) * Q * u; }, normals, order);
  out.I2 = gaussian_expectation_2d([&](double u, double v) { const double d = delta(u, v); return d * d; }, normals,
                                   order);
  out.I3 = gaussian_expectation_2d([&](double u, double v) { return delta(u, v) * (R * u + root * v); }, normals,
                                   order);
  return out;
}

IntegralEstimate mc_integrals(const OrderState& state, ActivationKind act, std::size_t n_samples, Seed seed) {
  if (!(state.Q > 0)) throw DomainError("Q must be positive");
  detail::check_overlap(state.R);
  if (n_samples == 0) return {quadrature_integrals(state, act), {}};
  if (n_samples < 10000) throw DomainError("mc_integrals needs at least 1e4 samples (or 0 for quadrature)");

  const double Q = state.Q;
  const double R = state.R;
  const double root = std::sqrt(std::max(0.0, 1 - R * R));
  Engine engine = make_engine(seed);
  std::normal_distribution<double> normal;
  Accumulator a1, a2, a3;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double u = normal(engine);
    const double v = normal(engine);
    const double s = Q * u;
    const double t = R * u + root * v;
    const double d = activate_derivative(act, s) * (activate(act, t) - activate(act, s));
    a1.push(d * s);
    a2.push(d * d);
    a3.push(d * t);
  }
  return {{a1.mean, a2.mean, a3.mean}, {a1.std_error(), a2.std_error(), a3.std_error()}};
}

double gen_integral(double gamma, double R, ActivationKind teacher, ActivationKind student, IntegralMode mode) {
  if (teacher != ActivationKind::Identity) throw DomainError("gen_integral supports only the linear teacher");
  detail::check_overlap(R);
  if (mode == IntegralMode::Closed) {
    if (student == ActivationKind::Identity) return 1 + gamma * gamma - 2 * gamma * R;
    return 1 + gamma * gamma / 2 - gamma * R;
  }
  const double root = std::sqrt(std::max(0.0, 1 - R * R));
  const std::array<Eigen::Vector2d, 1> kinks{Eigen::Vector2d(gamma * R, gamma * root)};
  const std::span<const Eigen::Vector2d> normals =
      student == ActivationKind::ReLU ? std::span<const Eigen::Vector2d>(kinks) : std::span<const Eigen::Vector2d>();
  return gaussian_expectation_2d(
      [&](double h1, double h2) {
        const double diff = h1 - activate(student, gamma * R * h1 + gamma * root * h2);
        return diff * diff;
      },
      normals);
}

}  // namespace bnlab
