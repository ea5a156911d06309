#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include <Eigen/QR>

#include "bnlab/dynamics.hpp"
#include "bnlab/gauss_kernels.hpp"
#include "bnlab/rng.hpp"
#include "bnlab/sgd_lab.hpp"

using namespace bnlab;

namespace {

double g(ActivationKind act, double h) { return act == ActivationKind::ReLU ? std::max(h, 0.0) : h; }

// Half mean-squared batch loss written out directly from the forward pass of each method.
double batch_loss(const Eigen::VectorXd& w, double gamma, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  MethodKind method, ActivationKind act) {
  const double m = static_cast<double>(X.cols());
  double mean = 0;
  for (Eigen::Index k = 0; k < X.cols(); ++k) mean += w.dot(X.col(k)) / m;
  double var = 0;
  for (Eigen::Index k = 0; k < X.cols(); ++k) var += std::pow(w.dot(X.col(k)) - mean, 2) / m;
  double loss = 0;
  for (Eigen::Index k = 0; k < X.cols(); ++k) {
    const double h = w.dot(X.col(k));
    double pre = h;
    if (method == MethodKind::WN || method == MethodKind::WNGammaDecay)
      pre = gamma * std::sqrt(static_cast<double>(w.size())) * h / w.norm();
    if (method == MethodKind::BN) pre = gamma * h / std::sqrt(var);
    loss += 0.5 * std::pow(y(k) - g(act, pre), 2) / m;
  }
  return loss;
}

struct Fixture {
  Eigen::MatrixXd X{4, 3};
  Eigen::VectorXd w{4};
  Eigen::VectorXd teacher{4};
  Eigen::VectorXd y{3};
  Fixture() {
    X << 0.3, -0.7, 0.2,
         -0.5, 0.1, 0.9,
         0.8, 0.4, -0.3,
         -0.1, 0.6, 0.5;
    w << 0.4, -0.2, 0.7, 0.1;
    teacher << 1.0, 0.5, -0.5, 1.5;
    y = X.transpose() * teacher;
  }
};

// Central-difference gradient of the batch loss in (w, gamma).
Eigen::VectorXd fd_gradient(const Fixture& f, double gamma, MethodKind method, ActivationKind act) {
  const double h = 1e-6;
  Eigen::VectorXd grad(5);
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd wp = f.w, wm = f.w;
    wp(i) += h;
    wm(i) -= h;
    grad(i) = (batch_loss(wp, gamma, f.X, f.y, method, act) - batch_loss(wm, gamma, f.X, f.y, method, act)) / (2 * h);
  }
  grad(4) = (batch_loss(f.w, gamma + h, f.X, f.y, method, act) - batch_loss(f.w, gamma - h, f.X, f.y, method, act)) /
            (2 * h);
  return grad;
}

TeacherStudentConfig small_config(MethodKind method, ActivationKind act) {
  TeacherStudentConfig c;
  c.N = 128;
  c.M = 8;
  c.alpha = 0.5;
  c.S = 0.25;
  c.eta = 4.0;
  c.gamma_lr_scale = 1.0 / 8;
  c.lr_decay = 0.99;
  c.method = method;
  c.act = act;
  c.epochs = 200;
  c.test_samples = 20000;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("teacher is normalized, seed-deterministic, and nearly orthogonal across seeds") {
  for (int N : {64, 1024, 4096}) {
    const auto a = make_teacher(N, 1);
    const auto b = make_teacher(N, 2);
    CHECK(std::abs(a.squaredNorm() / N - 1) <= 1e-12);
    CHECK(std::abs(a.dot(b) / N) <= 4 / std::sqrt(static_cast<double>(N)));
    CHECK(make_teacher(N, 1) == a);
  }
}

TEST_CASE("inputs have variance 1/N and norms concentrating at 1") {
  const int N = 1024;
  const auto X = sample_inputs(N, 100, 3);
  CHECK(X == sample_inputs(N, 100, 3));
  // 10^5 draws of one coordinate.
  const auto col = sample_inputs(N, 98, 11).reshaped();
  const double var = col.squaredNorm() / static_cast<double>(col.size());
  CHECK(std::abs(var * N - 1) <= 0.05);
  int inside = 0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) inside += std::abs(X.col(j).squaredNorm() - 1) <= 0.15;
  CHECK(inside >= 99);
}

TEST_CASE("label noise has variance S") {
  const int N = 64;
  const auto teacher = make_teacher(N, 1);
  const auto X = sample_inputs(N, 100000, 2);
  const auto y = teacher_labels(teacher, X, ActivationKind::Identity, 0.25, 3);
  const Eigen::VectorXd s = y - X.transpose() * teacher;
  const double mean = s.mean();
  const double var = (s.array() - mean).square().sum() / static_cast<double>(s.size() - 1);
  CHECK(std::abs(var / 0.25 - 1) <= 0.05);
  CHECK(teacher_labels(teacher, X, ActivationKind::Identity, 0.0, 3) == X.transpose() * teacher);
}

TEST_CASE("make_student realizes the requested order parameters") {
  const auto teacher = make_teacher(256, 5);
  OrderState s;
  s.Q = 0.7;
  s.R = 0.4;
  s.L = 1.3;
  for (MethodKind m : {MethodKind::BN, MethodKind::WN, MethodKind::WNGammaDecay}) {
    const auto op = order_parameters(make_student(teacher, s, m, 9), teacher, m);
    CHECK(op.Q == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(op.R == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(op.L == doctest::Approx(1.3).epsilon(1e-12));
  }
  const auto op = order_parameters(make_student(teacher, s, MethodKind::VanillaSGD, 9), teacher, MethodKind::VanillaSGD);
  CHECK(op.Q == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(op.L == op.Q);
}

TEST_CASE("perfect student receives no update") {
  const int N = 64;
  const auto teacher = make_teacher(N, 1);
  const Eigen::MatrixXd X = sample_inputs(N, 16, 2);
  const Eigen::VectorXd y = X.transpose() * teacher;
  TeacherStudentConfig cfg;
  for (MethodKind m : {MethodKind::VanillaSGD, MethodKind::WN, MethodKind::WNGammaDecay, MethodKind::BN}) {
    cfg.method = m;
    StudentState s;
    const double c = m == MethodKind::VanillaSGD ? 1.0 : 2.5;
    s.w = c * teacher;
    s.gamma = 1.0;
    if (m == MethodKind::BN) {
      // gamma h / sigma_B reproduces w*^T x when gamma = sigma_B / c.
      const Eigen::VectorXd h = X.transpose() * s.w;
      s.gamma = std::sqrt((h.array() - h.mean()).square().mean()) / c;
    }
    const StudentState before = s;
    REQUIRE(sgd_step(s, X, y, cfg, 0.5, 0.5));
    CHECK((s.w - before.w).norm() <= 1e-12 * before.w.norm());
    CHECK(std::abs(s.gamma - before.gamma) <= 1e-12);
  }
}

TEST_CASE("gamma decays geometrically when the gradient term vanishes") {
  const int N = 64;
  const auto teacher = make_teacher(N, 1);
  const Eigen::MatrixXd X = sample_inputs(N, 4, 2);
  TeacherStudentConfig cfg;
  cfg.method = MethodKind::WNGammaDecay;
  cfg.zeta = 0.3;
  StudentState s;
  s.w = teacher;
  s.gamma = 2.0;
  // Labels equal to the current prediction make delta = 0.
  const double eta = 0.1;
  for (int step = 1; step <= 10; ++step) {
    REQUIRE(sgd_step(s, X, student_preactivation(s, X, cfg.method), cfg, eta, eta));
    CHECK(s.gamma == doctest::Approx(2.0 * std::pow(1 - eta * cfg.zeta, step)).epsilon(1e-13));
  }
}

TEST_CASE("SGD steps follow the finite-difference gradient of the batch loss") {
  const Fixture f;
  TeacherStudentConfig cfg;
  for (ActivationKind act : {ActivationKind::Identity, ActivationKind::ReLU}) {
    for (MethodKind m : {MethodKind::VanillaSGD, MethodKind::WN, MethodKind::BN}) {
      cfg.method = m;
      cfg.act = act;
      StudentState s;
      s.w = f.w;
      s.gamma = 0.8;
      REQUIRE(sgd_step(s, f.X, f.y, cfg, 1.0, 1.0));
      const Eigen::VectorXd grad = fd_gradient(f, 0.8, m, act);
      for (int i = 0; i < 4; ++i) CHECK(s.w(i) - f.w(i) == doctest::Approx(-grad(i)).epsilon(1e-6).scale(1e-6));
      if (m != MethodKind::VanillaSGD) CHECK(s.gamma - 0.8 == doctest::Approx(-grad(4)).epsilon(1e-6).scale(1e-6));
    }
  }
}

TEST_CASE("normalized updates preserve the function scale invariance") {
  // The w-gradient of WN and BN is orthogonal to w, so |w| can only grow.
  const Fixture f;
  TeacherStudentConfig cfg;
  for (MethodKind m : {MethodKind::WN, MethodKind::BN}) {
    cfg.method = m;
    StudentState s;
    s.w = f.w;
    s.gamma = 0.8;
    REQUIRE(sgd_step(s, f.X, f.y, cfg, 1e-3, 0.0));
    CHECK(std::abs((s.w - f.w).dot(f.w)) <= 1e-12);
  }
}

TEST_CASE("non-finite updates are refused") {
  const Fixture f;
  TeacherStudentConfig cfg;
  StudentState s;
  s.w = f.w;
  Eigen::VectorXd y = f.y;
  y(0) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(sgd_step(s, f.X, y, cfg, 1.0, 1.0));
  CHECK(s.w == f.w);
}

TEST_CASE("runs are deterministic") {
  auto cfg = small_config(MethodKind::BN, ActivationKind::ReLU);
  cfg.epochs = 20;
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  CHECK(a.train_loss_trace == b.train_loss_trace);
  CHECK(a.gen_error == b.gen_error);
  CHECK(a.final_state.w == b.final_state.w);
  cfg.seed = 8;
  CHECK(run_experiment(cfg).train_loss_trace != a.train_loss_trace);
}

TEST_CASE("closed-form and Monte Carlo generalization errors agree") {
  for (MethodKind m : {MethodKind::VanillaSGD, MethodKind::WNGammaDecay, MethodKind::BN}) {
    for (ActivationKind act : {ActivationKind::Identity, ActivationKind::ReLU}) {
      auto cfg = small_config(m, act);
      cfg.zeta = 0.05;
      const auto r = run_experiment(cfg);
      REQUIRE_FALSE(r.diverged);
      CHECK(r.gen_error >= 0);
      CHECK(std::abs(r.gen_error - r.gen_error_mc) <= 3 * r.gen_error_mc_stderr);
      CHECK(r.order_trace.states.size() == r.train_loss_trace.size());
    }
  }
}

TEST_CASE("vanilla linear student at alpha = 0.5 sits on the pseudo-inverse curve") {
  TeacherStudentConfig cfg;
  cfg.N = 1024;
  cfg.M = 32;
  cfg.alpha = 0.5;
  cfg.S = 0.25;
  cfg.eta = 16.0;
  cfg.epochs = 2000;
  const auto r = run_experiment(cfg);
  REQUIRE_FALSE(r.diverged);
  // 1 - alpha + alpha S / (1 - alpha) = 0.75.
  CHECK(std::abs(r.gen_error / 0.75 - 1) <= 0.10);
}

TEST_CASE("span-projected initialization keeps w inside the input span") {
  auto cfg = small_config(MethodKind::WN, ActivationKind::Identity);
  cfg.epochs = 1;
  const auto r = run_experiment(cfg);
  const auto X = sample_inputs(cfg.N, static_cast<std::size_t>(cfg.sample_count()), derive_seed(cfg.seed, 2));
  const Eigen::VectorXd coef = X.colPivHouseholderQr().solve(r.final_state.w);
  CHECK((X * coef - r.final_state.w).norm() <= 1e-9 * r.final_state.w.norm());
}

TEST_CASE("BN inference uses training-set statistics") {
  auto cfg = small_config(MethodKind::BN, ActivationKind::Identity);
  cfg.epochs = 5;
  const auto r = run_experiment(cfg);
  const auto& s = r.final_state;
  const auto X = sample_inputs(cfg.N, static_cast<std::size_t>(cfg.sample_count()), derive_seed(cfg.seed, 2));
  const Eigen::VectorXd h = X.transpose() * s.w;
  CHECK(s.bn_sigma == doctest::Approx(std::sqrt((h.array() - h.mean()).square().mean())).epsilon(1e-12));
  const auto teacher = make_teacher(cfg.N, derive_seed(cfg.seed, 1));
  const auto op = order_parameters(s, teacher, MethodKind::BN);
  CHECK(op.Q == doctest::Approx(s.gamma * op.L / s.bn_sigma).epsilon(1e-12));
}

TEST_CASE("training loss is recorded from epoch 0 and decreases overall") {
  auto cfg = small_config(MethodKind::VanillaSGD, ActivationKind::Identity);
  const auto r = run_experiment(cfg);
  REQUIRE(r.train_loss_trace.size() >= 2);
  CHECK(r.order_trace.times.front() == 0.0);
  CHECK(r.train_loss_trace.back() < r.train_loss_trace.front());
}

TEST_CASE("config validation") {
  TeacherStudentConfig cfg;
  cfg.N = 32;
  CHECK_THROWS_AS(run_experiment(cfg), DomainError);
  cfg.N = 64;
  cfg.M = 1;
  CHECK_THROWS_AS(run_experiment(cfg), DomainError);
  cfg.M = 8;
  cfg.S = -1;
  CHECK_THROWS_AS(run_experiment(cfg), DomainError);
  cfg.S = 0;
  cfg.alpha = 0.05;
  CHECK_THROWS_AS(run_experiment(cfg), DomainError);  // P = 3 < M
  cfg.P = 16;
  CHECK(cfg.sample_count() == 16);
}

TEST_CASE("online BN/ReLU learning follows the integrated ODE") {
  TeacherStudentConfig cfg;
  cfg.N = 2048;
  cfg.eta = 0.05;
  cfg.zeta = 0.25;
  cfg.S = 0;
  cfg.act = ActivationKind::ReLU;
  cfg.teacher_act = ActivationKind::ReLU;
  cfg.method = MethodKind::BN;
  OrderState s0;
  s0.Q = 1;
  s0.R = 0.3;
  s0.L = 1;
  const double t_end = 30;
  const auto sim = run_online(cfg, s0, t_end, 5);
  const auto ode = integrate(s0, {cfg.eta, cfg.zeta, cfg.act, cfg.method}, t_end, 0.01, 500);
  REQUIRE(sim.times.size() == ode.times.size());
  for (std::size_t i = 0; i < sim.times.size(); ++i) {
    CHECK(sim.times[i] == doctest::Approx(ode.times[i]));
    CHECK(std::abs(sim.states[i].Q - ode.states[i].Q) <= 0.05);
    CHECK(std::abs(sim.states[i].R - ode.states[i].R) <= 0.05);
  }
}

TEST_CASE("online learning settles at Q = 1 / (2 zeta + 1)") {
  for (double zeta : {0.1, 0.25}) {
    TeacherStudentConfig cfg;
    cfg.N = 1024;
    cfg.eta = 0.2;
    cfg.zeta = zeta;
    cfg.S = 0;
    cfg.act = ActivationKind::ReLU;
    cfg.teacher_act = ActivationKind::ReLU;
    cfg.method = MethodKind::BN;
    OrderState s0;
    s0.Q = 1;
    s0.R = 0.9;
    s0.L = 1;
    const auto sim = run_online(cfg, s0, 40, 10);
    REQUIRE_FALSE(sim.diverged);
    CHECK(std::abs(sim.states.back().Q - 1 / (2 * zeta + 1)) <= 0.02);
    CHECK(sim.states.back().R > 0.99);
  }
}
