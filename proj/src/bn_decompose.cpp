#include "bnlab/bn_decompose.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "bnlab/rng.hpp"

namespace bnlab {

namespace {

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Running mean, variance and fourth central moment (one-pass update of Pebay).
struct Moments {
  double n = 0, mean = 0, m2 = 0, m3 = 0, m4 = 0;
  void add(double x) {
    const double n1 = n;
    n += 1;
    const double delta = x - mean;
    const double dn = delta / n;
    const double dn2 = dn * dn;
    const double t1 = delta * dn * n1;
    mean += dn;
    m4 += t1 * dn2 * (n * n - 3 * n + 3) + 6 * dn2 * m2 - 4 * dn * m3;
    m3 += t1 * dn * (n - 2) - 3 * dn * m2;
    m2 += t1;
  }
  double variance() const { return m2 / n; }
  double central4() const { return m4 / n; }
  // Standard error of the mean and of the (biased) variance over n draws.
  double mean_stderr() const { return std::sqrt(variance() / n); }
  double variance_stderr() const { return std::sqrt(std::max(0.0, central4() - variance() * variance()) / n); }
};

// The first M entries of perm become a uniformly drawn M-subset (partial Fisher-Yates).
void draw_subset(std::vector<std::size_t>& perm, int M, Engine& engine) {
  for (std::size_t i = 0; i < static_cast<std::size_t>(M); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, perm.size() - 1);
    std::swap(perm[i], perm[pick(engine)]);
  }
}

double loss_value(GlmLoss loss, double h_hat, double y) {
  if (loss == GlmLoss::Identity) return 0.5 * (y - h_hat) * (y - h_hat);
  return softplus(h_hat) - y * h_hat;
}

// Second derivative of the partition function A at h.
double curvature(GlmLoss loss, double h) {
  if (loss == GlmLoss::Identity) return 1.0;
  const double s = sigmoid(h);
  return s * (1 - s);
}

double mean_curvature_literal(GlmLoss loss, double h) { return loss == GlmLoss::Identity ? 1.0 : sigmoid(h); }

double loss_scale(ZetaConvention c) { return c == ZetaConvention::NoBiasFull ? 2.0 : 1.0; }

}  // namespace

PopulationStats estimate_population(std::span<const double> h) {
  if (h.size() < 1000) throw DomainError("estimate_population needs at least 1000 samples");
  Moments m;
  for (double x : h) m.add(x);
  const double var = m.variance();
  if (!(var > 0)) throw DegenerateError("pre-activation samples have zero variance");
  return {m.mean, std::sqrt(var), m.central4() / (var * var) - 3};
}

std::string_view to_string(SampleDistribution d) {
  switch (d) {
    case SampleDistribution::Gaussian: return "gaussian";
    case SampleDistribution::Uniform: return "uniform";
    case SampleDistribution::Laplace: return "laplace";
  }
  return "?";
}

SampleDistribution parse_distribution(std::string_view name) {
  if (name == "gaussian") return SampleDistribution::Gaussian;
  if (name == "uniform") return SampleDistribution::Uniform;
  if (name == "laplace") return SampleDistribution::Laplace;
  throw DomainError("unknown distribution: " + std::string(name));
}

std::vector<double> sample_distribution(SampleDistribution d, std::size_t n, Seed seed) {
  Engine engine = make_engine(seed);
  std::vector<double> out(n);
  switch (d) {
    case SampleDistribution::Gaussian: {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (auto& x : out) x = dist(engine);
      break;
    }
    case SampleDistribution::Uniform: {
      const double a = std::sqrt(3.0);
      std::uniform_real_distribution<double> dist(-a, a);
      for (auto& x : out) x = dist(engine);
      break;
    }
    case SampleDistribution::Laplace: {
      // Scale 1/sqrt(2) gives unit variance.
      std::exponential_distribution<double> expo(std::sqrt(2.0));
      std::bernoulli_distribution sign(0.5);
      for (auto& x : out) x = sign(engine) ? expo(engine) : -expo(engine);
      break;
    }
  }
  return out;
}

bool PriorReport::pass(double sigmas) const {
  for (const auto* c : checks())
    if (!c->pass(sigmas)) return false;
  return true;
}

PriorReport verify_priors(std::span<const double> h, int M, std::size_t trials, Seed seed) {
  if (M < 8) throw DomainError("verify_priors requires M >= 8");
  if (trials < 10000) throw DomainError("verify_priors requires trials >= 1e4");
  if (static_cast<std::size_t>(M) > h.size()) throw DomainError("batch larger than the sample");
  PriorReport r;
  r.population = estimate_population(h);
  r.M = M;
  r.trials = trials;
  Engine engine = make_engine(seed);
  std::vector<std::size_t> perm(h.size());
  std::iota(perm.begin(), perm.end(), 0);
  Moments mu_m, sigma_m;
  for (std::size_t t = 0; t < trials; ++t) {
    draw_subset(perm, M, engine);
    double mean = 0;
    for (int k = 0; k < M; ++k) mean += h[perm[static_cast<std::size_t>(k)]];
    mean /= M;
    double ss = 0;
    for (int k = 0; k < M; ++k) ss += std::pow(h[perm[static_cast<std::size_t>(k)]] - mean, 2);
    mu_m.add(mean);
    sigma_m.add(std::sqrt(ss / M));
  }
  const auto& p = r.population;
  const double sp2 = p.sigma_P * p.sigma_P;
  r.mean_mu = {"mean(mu_B)", mu_m.mean, p.mu_P, mu_m.mean_stderr()};
  r.var_mu = {"var(mu_B)", mu_m.variance(), sp2 / M, mu_m.variance_stderr()};
  r.mean_sigma = {"mean(sigma_B)", sigma_m.mean, p.sigma_P, sigma_m.mean_stderr()};
  r.var_sigma = {"var(sigma_B)", sigma_m.variance(), sp2 * (p.rho + 2) / (4.0 * M), sigma_m.variance_stderr()};
  return r;
}

std::string_view to_string(GlmLoss l) { return l == GlmLoss::Identity ? "identity" : "softplus"; }

GlmLoss parse_loss(std::string_view name) {
  if (name == "identity" || name == "gaussian") return GlmLoss::Identity;
  if (name == "softplus") return GlmLoss::Softplus;
  throw DomainError("unknown loss: " + std::string(name));
}

std::string_view to_string(ZetaConvention c) {
  switch (c) {
    case ZetaConvention::NoBiasHalf: return "no_bias_half_mse";
    case ZetaConvention::BiasHalf: return "bias_half_mse";
    case ZetaConvention::NoBiasFull: return "no_bias_full_mse";
  }
  return "?";
}

ZetaConvention parse_convention(std::string_view name) {
  if (name == "no_bias_half_mse") return ZetaConvention::NoBiasHalf;
  if (name == "bias_half_mse") return ZetaConvention::BiasHalf;
  if (name == "no_bias_full_mse") return ZetaConvention::NoBiasFull;
  throw DomainError("unknown convention: " + std::string(name));
}

ZetaTerms zeta_of_h(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, double gamma, double beta_shift, int M,
                    GlmLoss loss, ZetaConvention convention) {
  if (M < 1) throw DomainError("M must be positive");
  const Eigen::VectorXd h = X.transpose() * w;
  ZetaTerms z;
  z.population = estimate_population(std::span<const double>(h.data(), static_cast<std::size_t>(h.size())));
  const auto& p = z.population;
  double fisher = 0, literal = 0, exact = 0;
  for (Eigen::Index j = 0; j < h.size(); ++j) {
    const double n = (h(j) - p.mu_P) / p.sigma_P;
    const double h_bar = gamma * n + beta_shift;
    fisher += curvature(loss, h_bar) * n * n;
    literal += mean_curvature_literal(loss, h_bar);
    exact += curvature(loss, h_bar);
  }
  const double P = static_cast<double>(h.size());
  z.fisher = fisher / P;
  z.fisher_term = (p.rho + 2) / (8.0 * M) * z.fisher;
  z.sigmoid_term = literal / P / (2.0 * M);
  z.sigmoid_term_exact = exact / P / (2.0 * M);
  switch (convention) {
    case ZetaConvention::NoBiasHalf: z.zeta = z.fisher_term; break;
    case ZetaConvention::BiasHalf: z.zeta = z.fisher_term + z.sigmoid_term; break;
    case ZetaConvention::NoBiasFull: z.zeta = 2 * z.fisher_term; break;
  }
  return z;
}

double linear_zeta_exact(int M, double lambda) {
  if (M < 5) throw DomainError("linear_zeta_exact requires M >= 5");
  const double m = M;
  const double ratio1 = std::exp(std::lgamma((m - 3) / 2) - std::lgamma((m - 1) / 2));
  const double ratio2 = std::exp(std::lgamma((m - 2) / 2) - std::lgamma((m - 1) / 2));
  return lambda * (1 + m * ratio1 / 2 - std::sqrt(2 * m) * ratio2);
}

DecompositionReport decompose_check(const Dataset& data, const StudentState& student, int M, std::size_t n_mc,
                                    Seed seed, GlmLoss loss, ZetaConvention convention) {
  const Eigen::Index P = data.X.cols();
  if (M < 2 || M > P) throw DomainError("decompose_check needs 2 <= M <= P");
  if (n_mc < 2) throw DomainError("decompose_check needs n_mc >= 2");
  if (data.y.size() != P) throw DomainError("labels and inputs disagree in count");

  const ZetaTerms z = zeta_of_h(data.X, student.w, student.gamma, student.beta_shift, M, loss, convention);
  const auto& pop = z.population;
  const Eigen::VectorXd h = data.X.transpose() * student.w;
  const double scale = loss_scale(convention);
  const double gamma = student.gamma;
  const double beta = student.beta_shift;

  auto data_loss = [&](double center, double sigma) {
    double s = 0;
    for (Eigen::Index j = 0; j < P; ++j) s += loss_value(loss, gamma * (h(j) - center) / sigma + beta, data.y(j));
    return scale * s / static_cast<double>(P);
  };

  DecompositionReport r;
  r.pn_loss = data_loss(pop.mu_P, pop.sigma_P);

  // Every draw has its own derived seed, so the estimate does not depend on scheduling.
  std::vector<double> draws(n_mc);
  std::vector<std::size_t> perm(static_cast<std::size_t>(P));
  for (std::size_t t = 0; t < n_mc; ++t) {
    std::iota(perm.begin(), perm.end(), 0);
    Engine engine = make_engine(derive_seed(seed, t));
    draw_subset(perm, M, engine);
    double mean = 0;
    for (int k = 0; k < M; ++k) mean += h(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(k)]));
    mean /= M;
    double ss = 0;
    for (int k = 0; k < M; ++k) ss += std::pow(h(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(k)])) - mean, 2);
    const double sigma_B = std::max(std::sqrt(ss / M), 1e-12);
    const double center = convention == ZetaConvention::BiasHalf ? mean : pop.mu_P;
    draws[t] = data_loss(center, sigma_B);
  }
  Moments m;
  for (double d : draws) m.add(d);

  r.e_bn_mc = m.mean;
  r.mc_stderr = std::sqrt(m.m2 / (m.n - 1) / m.n);
  r.zeta = z.zeta;
  r.fisher_term = z.fisher_term;
  r.sigmoid_term = z.sigmoid_term;
  r.sigmoid_term_exact = z.sigmoid_term_exact;
  r.gamma = gamma;
  r.residual = r.e_bn_mc - (r.pn_loss + r.zeta * gamma * gamma);
  r.M = M;
  r.N = static_cast<int>(data.X.rows());
  r.n_mc = n_mc;
  r.loss = loss;
  r.convention = convention;
  r.population = pop;
  return r;
}

std::string report_json(const DecompositionReport& r) {
  nlohmann::ordered_json j;
  j["e_bn_mc"] = r.e_bn_mc;
  j["mc_stderr"] = r.mc_stderr;
  j["pn_loss"] = r.pn_loss;
  j["zeta"] = r.zeta;
  j["fisher_term"] = r.fisher_term;
  j["sigmoid_term"] = r.sigmoid_term;
  j["sigmoid_term_exact"] = r.sigmoid_term_exact;
  j["gamma"] = r.gamma;
  j["residual"] = r.residual;
  j["M"] = r.M;
  j["N"] = r.N;
  j["n_mc"] = r.n_mc;
  j["convention"] = std::string(to_string(r.convention));
  j["loss"] = std::string(to_string(r.loss));
  j["lambda"] = r.lambda;
  j["population"] = {{"mu_P", r.population.mu_P}, {"sigma_P", r.population.sigma_P}, {"rho", r.population.rho}};
  return j.dump(2);
}

}  // namespace bnlab
