#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "bnlab/core.hpp"
#include "bnlab/sgd_lab.hpp"

namespace bnlab {

/// Moments of the pre-activation h over its population. rho is the excess kurtosis.
struct PopulationStats {
  double mu_P = 0;
  double sigma_P = 1;
  double rho = 0;
};

/// Sample mean, biased standard deviation and excess kurtosis. Needs >= 1000 samples;
/// DegenerateError on zero variance.
PopulationStats estimate_population(std::span<const double> h);

enum class SampleDistribution { Gaussian, Uniform, Laplace };

std::string_view to_string(SampleDistribution d);
SampleDistribution parse_distribution(std::string_view name);

/// n draws with zero mean and unit variance (excess kurtosis 0, -1.2 and 3).
std::vector<double> sample_distribution(SampleDistribution d, std::size_t n, Seed seed);

/// One moment of a batch statistic against its predicted prior value.
struct MomentCheck {
  std::string name;
  double empirical = 0;
  double predicted = 0;
  double std_error = 0;   // standard error of `empirical`
  double relative_deviation() const { return empirical / predicted - 1; }
  double z() const { return (empirical - predicted) / std_error; }
  bool pass(double sigmas = 3) const { return std::abs(z()) <= sigmas; }
};

/// Prior of the batch statistics: mu_B ~ N(mu_P, sigma_P^2 / M), sigma_B ~ N(sigma_P, sigma_P^2 (rho + 2) / (4M)).
struct PriorReport {
  PopulationStats population;
  int M = 0;
  std::size_t trials = 0;
  MomentCheck mean_mu;
  MomentCheck var_mu;
  MomentCheck mean_sigma;
  MomentCheck var_sigma;
  std::vector<const MomentCheck*> checks() const { return {&mean_mu, &var_mu, &mean_sigma, &var_sigma}; }
  bool pass(double sigmas = 3) const;
};

/// Draws `trials` batches of M distinct values (uniformly, without replacement) from h and compares the
/// mean and variance of mu_B and the biased sigma_B with the prior. Requires M >= 8, trials >= 1e4.
PriorReport verify_priors(std::span<const double> h, int M, std::size_t trials, Seed seed);

/// Loss of the single-layer GLM: Gaussian (half squared error, identity link) or the softplus
/// partition function A(h) = log(1 + e^h), l = A(h) - y h, the ReLU surrogate.
enum class GlmLoss { Identity, Softplus };

/// Which of the linear-case gamma-decay conventions is active:
///   NoBiasHalf  - mu_B not normalized (its term dropped), halved loss: zeta = fisher_term -> 1/(4M)
///   BiasHalf    - mu_B normalized, halved loss: zeta = fisher_term + sigmoid_term -> 3/(4M)
///   NoBiasFull  - mu_B not normalized, loss without the 1/2: zeta = 2 fisher_term -> 1/(2M)
enum class ZetaConvention { NoBiasHalf, BiasHalf, NoBiasFull };

std::string_view to_string(GlmLoss l);
GlmLoss parse_loss(std::string_view name);
std::string_view to_string(ZetaConvention c);
ZetaConvention parse_convention(std::string_view name);

struct ZetaTerms {
  double zeta = 0;
  double fisher = 0;               // I(gamma) = (1/P) sum A''(h_bar) n^2, n = (h - mu_P) / sigma_P
  double fisher_term = 0;          // (rho + 2) / (8M) I(gamma)
  double sigmoid_term = 0;         // 1/(2M) (1/P) sum sigmoid(h_bar), the literal mean curvature
  double sigmoid_term_exact = 0;   // 1/(2M) (1/P) sum A''(h_bar), sigmoid (1 - sigmoid) for softplus
  PopulationStats population;
};

/// Gamma-decay coefficient of a data set: h = w^T x over the columns of X, h_bar the
/// population-normalized gamma (h - mu_P) / sigma_P + beta_shift. DegenerateError if sigma_P = 0.
ZetaTerms zeta_of_h(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, double gamma, double beta_shift, int M,
                    GlmLoss loss = GlmLoss::Identity, ZetaConvention convention = ZetaConvention::NoBiasHalf);

/// lambda (1 + M Gamma((M-3)/2) / (2 Gamma((M-1)/2)) - sqrt(2M) Gamma((M-2)/2) / Gamma((M-1)/2))
/// with lambda = 1, through lgamma. Equals lambda E[(sigma / s - 1)^2] for the biased standard
/// deviation s of M Gaussian draws. DomainError for M < 5.
double linear_zeta_exact(int M, double lambda = 1.0);

struct DecompositionReport {
  double e_bn_mc = 0;       // MC expectation of the BN loss over batch statistics
  double mc_stderr = 0;
  double pn_loss = 0;
  double zeta = 0;
  double fisher_term = 0;
  double sigmoid_term = 0;
  double sigmoid_term_exact = 0;
  double gamma = 0;
  double residual = 0;      // e_bn_mc - (pn_loss + zeta gamma^2)
  int M = 0;
  int N = 0;
  std::size_t n_mc = 0;
  double lambda = 1.0;
  GlmLoss loss = GlmLoss::Identity;
  ZetaConvention convention = ZetaConvention::NoBiasHalf;
  PopulationStats population;
  double gap() const { return e_bn_mc - pn_loss; }
};

/// Left side: n_mc batches of M distinct samples are drawn; each yields (mu_B, sigma_B), and the
/// data-averaged loss is evaluated with h normalized by them (mu_B is used only under
/// BiasHalf; otherwise mu_P). Right side: PN loss plus zeta_of_h gamma^2.
DecompositionReport decompose_check(const Dataset& data, const StudentState& student, int M, std::size_t n_mc,
                                    Seed seed, GlmLoss loss = GlmLoss::Identity,
                                    ZetaConvention convention = ZetaConvention::NoBiasHalf);

/// JSON object with keys e_bn_mc, mc_stderr, pn_loss, zeta, fisher_term, sigmoid_term, gamma,
/// residual, M, N, convention, plus the exact-curvature variant, lambda, loss and population moments.
std::string report_json(const DecompositionReport& r);

}  // namespace bnlab
