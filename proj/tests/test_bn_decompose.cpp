#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "bnlab/bn_decompose.hpp"
#include "bnlab/rng.hpp"

using namespace bnlab;

namespace {

std::span<const double> as_span(const std::vector<double>& v) { return {v.data(), v.size()}; }

// Teacher-student data with a student near the teacher and gamma at the PN optimum, so the
// first-order term of the expansion vanishes.
struct Setup {
  Dataset data;
  StudentState student;
  explicit Setup(Seed seed, int N = 256, long P = 4096) {
    const auto teacher = make_teacher(N, derive_seed(seed, 1));
    data.X = sample_inputs(N, static_cast<std::size_t>(P), derive_seed(seed, 2));
    data.y = teacher_labels(teacher, data.X, ActivationKind::Identity, 0.25, derive_seed(seed, 3));
    Engine engine = make_engine(derive_seed(seed, 4));
    std::normal_distribution<double> normal;
    student.w = teacher;
    for (Eigen::Index i = 0; i < N; ++i) student.w(i) += 0.5 * normal(engine);
    const Eigen::VectorXd h = data.X.transpose() * student.w;
    const Eigen::ArrayXd n = (h.array() - h.mean()) / std::sqrt((h.array() - h.mean()).square().mean());
    student.gamma = (n * data.y.array()).sum() / n.square().sum();
  }
};

// E[sigma / s] for the biased standard deviation s of M Gaussian draws, by the Gamma recursion.
double expected_inverse_ratio(int M) {
  // sqrt(M/2) Gamma((M-2)/2) / Gamma((M-1)/2)
  return std::sqrt(M / 2.0) * std::tgamma((M - 2) / 2.0) / std::tgamma((M - 1) / 2.0);
}

}  // namespace

TEST_CASE("population moments") {
  const auto g = sample_distribution(SampleDistribution::Gaussian, 1000000, 1);
  const auto pg = estimate_population(as_span(g));
  CHECK(std::abs(pg.mu_P) <= 0.01);
  CHECK(std::abs(pg.sigma_P - 1) <= 0.01);
  CHECK(std::abs(pg.rho) <= 0.05);
  const auto l = sample_distribution(SampleDistribution::Laplace, 1000000, 2);
  const auto pl = estimate_population(as_span(l));
  CHECK(std::abs(pl.rho - 3) <= 0.2);
  CHECK(std::abs(pl.sigma_P - 1) <= 0.01);
  const auto u = sample_distribution(SampleDistribution::Uniform, 1000000, 3);
  CHECK(std::abs(estimate_population(as_span(u)).rho + 1.2) <= 0.02);
  const std::vector<double> constant(2000, 3.5);
  CHECK_THROWS_AS(estimate_population(as_span(constant)), DegenerateError);
  const std::vector<double> few(999, 1.0);
  CHECK_THROWS_AS(estimate_population(as_span(few)), DomainError);
  CHECK(sample_distribution(SampleDistribution::Laplace, 10, 9) == sample_distribution(SampleDistribution::Laplace, 10, 9));
}

TEST_CASE("batch-statistic priors: documented tolerances") {
  const auto g = sample_distribution(SampleDistribution::Gaussian, 1000000, 4);
  const auto r = verify_priors(as_span(g), 32, 100000, 5);
  CHECK(std::abs(r.var_mu.relative_deviation()) <= 0.05);
  CHECK(std::abs(r.var_sigma.relative_deviation()) <= 0.10);
  CHECK(r.var_sigma.predicted == doctest::Approx(r.population.sigma_P * r.population.sigma_P * (r.population.rho + 2) / 128));
  const auto l = sample_distribution(SampleDistribution::Laplace, 1000000, 6);
  const auto rl = verify_priors(as_span(l), 32, 100000, 7);
  CHECK(std::abs(rl.var_sigma.relative_deviation()) <= 0.15);
}

TEST_CASE("batch-statistic priors scale with sigma_P^2") {
  auto g = sample_distribution(SampleDistribution::Gaussian, 200000, 8);
  for (auto& x : g) x = 3 * x + 1;
  const auto r = verify_priors(as_span(g), 32, 20000, 9);
  CHECK(std::abs(r.var_mu.relative_deviation()) <= 0.05);
  CHECK(std::abs(r.var_sigma.relative_deviation()) <= 0.10);
  CHECK(std::abs(r.mean_mu.empirical - 1) <= 0.01);
}

TEST_CASE("full-batch statistics are deterministic") {
  const auto g = sample_distribution(SampleDistribution::Uniform, 1000, 10);
  const auto r = verify_priors(as_span(g), 1000, 10000, 11);
  CHECK(r.var_mu.empirical <= 1e-25);
  CHECK(r.var_sigma.empirical <= 1e-25);
  CHECK_THROWS_AS(verify_priors(as_span(g), 4, 10000, 1), DomainError);
  CHECK_THROWS_AS(verify_priors(as_span(g), 16, 100, 1), DomainError);
}

TEST_CASE("linear_zeta_exact matches the Gamma recursion and a Monte Carlo oracle") {
  for (int M : {5, 8, 16, 32, 64, 100}) {
    const double oracle = 1 + static_cast<double>(M) / (M - 3) - 2 * expected_inverse_ratio(M);
    CHECK(linear_zeta_exact(M) == doctest::Approx(oracle).epsilon(1e-10));
  }
  for (int M : {16, 32}) {
    Engine engine = make_engine(static_cast<Seed>(M));
    std::normal_distribution<double> normal;
    const int draws = 200000;
    double sum = 0, sum_sq = 0;
    for (int t = 0; t < draws; ++t) {
      double mean = 0, ss = 0;
      std::vector<double> x(static_cast<std::size_t>(M));
      for (auto& v : x) {
        v = normal(engine);
        mean += v / M;
      }
      for (double v : x) ss += (v - mean) * (v - mean);
      const double r = 1 / std::sqrt(ss / M) - 1;
      sum += r * r;
      sum_sq += r * r * r * r;
    }
    const double mc = sum / draws;
    const double se = std::sqrt((sum_sq / draws - mc * mc) / draws);
    CHECK(std::abs(mc - linear_zeta_exact(M)) <= 3 * se);
  }
  CHECK(linear_zeta_exact(32, 2.0) == doctest::Approx(2 * linear_zeta_exact(32)));
  CHECK_THROWS_AS(linear_zeta_exact(4), DomainError);
}

TEST_CASE("linear_zeta_exact: documented values and trend") {
  CHECK(std::abs(linear_zeta_exact(32) / (3.0 / 128) - 1) <= 0.15);
  double prev = 1e9;
  for (int M = 16; M <= 1024; M *= 2) {
    const double scaled = M * linear_zeta_exact(M);
    CHECK(scaled < prev);
    CHECK(scaled > 0.5);
    prev = scaled;
  }
  // With lambda = 1 the limit is 1/2: M zeta = 1/2 + O(1/M).
  CHECK(std::abs(4096 * linear_zeta_exact(4096) - 0.5) <= 0.01);
}

TEST_CASE("zeta_of_h conventions for the linear case") {
  const Setup s(1);
  const int M = 32;
  const auto z = zeta_of_h(s.data.X, s.student.w, s.student.gamma, 0.0, M);
  CHECK(z.fisher == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(z.zeta * 4 * M - 1) <= 0.05);
  CHECK(z.sigmoid_term == doctest::Approx(1.0 / (2 * M)));
  const auto zb = zeta_of_h(s.data.X, s.student.w, s.student.gamma, 0.0, M, GlmLoss::Identity, ZetaConvention::BiasHalf);
  CHECK(std::abs(zb.zeta * 4 * M / 3 - 1) <= 0.05);
  const auto zf = zeta_of_h(s.data.X, s.student.w, s.student.gamma, 0.0, M, GlmLoss::Identity, ZetaConvention::NoBiasFull);
  CHECK(zf.zeta == doctest::Approx(2 * z.zeta));
  const auto z2 = zeta_of_h(s.data.X, s.student.w, s.student.gamma, 0.0, 2 * M);
  CHECK(z2.zeta == doctest::Approx(z.zeta / 2).epsilon(1e-12));
  CHECK(zeta_of_h(s.data.X, s.student.w, s.student.gamma, 0.0, 1 << 30).zeta < 1e-9);
  CHECK_THROWS_AS(zeta_of_h(s.data.X, Eigen::VectorXd::Zero(s.student.w.size()), 1.0, 0.0, M), DegenerateError);
}

TEST_CASE("softplus zeta components") {
  const Setup s(2);
  for (int M : {16, 64}) {
    for (double beta : {-1.0, 0.0, 2.0}) {
      const auto z = zeta_of_h(s.data.X, s.student.w, 1.5, beta, M, GlmLoss::Softplus, ZetaConvention::BiasHalf);
      CHECK(z.zeta > 0);
      CHECK(z.fisher_term >= 0);
      CHECK(z.sigmoid_term > 0);
      CHECK(z.sigmoid_term < 1.0 / (2 * M));
      CHECK(z.sigmoid_term_exact < z.sigmoid_term);
      CHECK(z.sigmoid_term_exact <= 0.25 / (2 * M));
    }
  }
}

TEST_CASE("gamma = 0 makes both sides equal") {
  Setup s(3);
  s.student.gamma = 0;
  s.student.beta_shift = 0.3;
  for (GlmLoss loss : {GlmLoss::Identity, GlmLoss::Softplus}) {
    const auto r = decompose_check(s.data, s.student, 32, 200, 4, loss);
    CHECK(std::abs(r.residual) <= 3 * r.mc_stderr + 1e-15);
    CHECK(r.e_bn_mc == doctest::Approx(r.pn_loss).epsilon(1e-14));
  }
}

TEST_CASE("BN-PN gap equals the finite-M expectation of the scale noise") {
  // Identity loss, gamma at the PN optimum: gap = gamma^2 E[(sigma_P / sigma_B - 1)^2] / 2 mean(n^2).
  const Setup s(4);
  for (int M : {16, 64}) {
    const auto r = decompose_check(s.data, s.student, M, 20000, 5);
    const double predicted = 0.5 * r.gamma * r.gamma * linear_zeta_exact(M);
    CHECK(std::abs(r.gap() / predicted - 1) <= 0.05);
  }
}

TEST_CASE("decomposition residual shrinks as 1/M^2 and the gap as 1/M") {
  double ratio_sum = 0;
  int ratios = 0;
  std::vector<double> log_m, log_gap;
  for (Seed seed : {6, 7}) {
    const Setup s(seed);
    double prev = 0;
    for (int M : {16, 32, 64, 128}) {
      const auto r = decompose_check(s.data, s.student, M, 10000, seed + 100);
      if (prev != 0) {
        ratio_sum += prev / r.residual;
        ++ratios;
      }
      prev = r.residual;
      if (seed == 6) {
        log_m.push_back(std::log(M));
        log_gap.push_back(std::log(r.gap()));
      }
    }
  }
  const double mean_ratio = ratio_sum / ratios;
  CHECK(mean_ratio >= 2.5);
  CHECK(mean_ratio <= 6.0);
  const Eigen::Map<Eigen::VectorXd> x(log_m.data(), static_cast<Eigen::Index>(log_m.size()));
  const Eigen::Map<Eigen::VectorXd> y(log_gap.data(), static_cast<Eigen::Index>(log_gap.size()));
  const double slope = ((x.array() - x.mean()) * (y.array() - y.mean())).sum() / (x.array() - x.mean()).square().sum();
  CHECK(slope >= -1.3);
  CHECK(slope <= -0.7);
}

TEST_CASE("report is deterministic and serializes every key") {
  const Setup s(8);
  const auto a = decompose_check(s.data, s.student, 32, 500, 9, GlmLoss::Softplus, ZetaConvention::BiasHalf);
  const auto b = decompose_check(s.data, s.student, 32, 500, 9, GlmLoss::Softplus, ZetaConvention::BiasHalf);
  CHECK(report_json(a) == report_json(b));
  CHECK(a.mc_stderr > 0);
  const auto j = nlohmann::json::parse(report_json(a));
  for (const char* key : {"e_bn_mc", "mc_stderr", "pn_loss", "zeta", "fisher_term", "sigmoid_term", "gamma", "residual",
                          "M", "N", "convention"})
    CHECK(j.contains(key));
  CHECK(j["convention"] == "bias_half_mse");
  CHECK(j["M"] == 32);
  CHECK(j["residual"].get<double>() == a.residual);
  CHECK(parse_convention(j["convention"].get<std::string>()) == ZetaConvention::BiasHalf);
}
