#include "bnlab/sgd_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/QR>

#include "bnlab/gauss_kernels.hpp"
#include "bnlab/rng.hpp"

namespace bnlab {

namespace {

constexpr double kSigmaFloor = 1e-12;
constexpr double kInterpolationFloor = 1e-20;

enum Stream : std::uint64_t { kTeacher = 1, kInputs, kNoise, kInit, kShuffle, kTest };

Eigen::VectorXd gaussian_vector(Eigen::Index n, Engine& engine, double sd) {
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(engine);
  return v;
}

template <typename Derived>
Eigen::VectorXd apply(ActivationKind act, const Eigen::MatrixBase<Derived>& h) {
  if (act == ActivationKind::Identity) return h;
  return h.cwiseMax(0.0);
}

template <typename Derived>
Eigen::VectorXd apply_derivative(ActivationKind act, const Eigen::MatrixBase<Derived>& h) {
  if (act == ActivationKind::Identity) return Eigen::VectorXd::Ones(h.size());
  return (h.array() > 0.0).template cast<double>();
}

bool is_normalized(MethodKind m) { return m != MethodKind::VanillaSGD; }

void validate(const TeacherStudentConfig& cfg) {
  if (cfg.N < 64) throw DomainError("N must be >= 64");
  if (!(cfg.S >= 0)) throw DomainError("S must be >= 0");
  if (!(cfg.eta > 0)) throw DomainError("eta must be > 0");
  if (!(cfg.zeta >= 0)) throw DomainError("zeta must be >= 0");
  if (!(cfg.init_norm > 0)) throw DomainError("init_norm must be > 0");
  if (!(cfg.lr_decay > 0 && cfg.lr_decay <= 1)) throw DomainError("lr_decay must lie in (0, 1]");
}

double half_mse(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat) {
  return 0.5 * (y - y_hat).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace

long TeacherStudentConfig::sample_count() const {
  if (P > 0) return P;
  if (!(alpha > 0)) throw DomainError("alpha must be > 0");
  return std::max(1L, std::lround(alpha * N));
}

Eigen::VectorXd make_teacher(int N, Seed seed) {
  if (N < 1) throw DomainError("N must be positive");
  Engine engine = make_engine(seed);
  Eigen::VectorXd w = gaussian_vector(N, engine, 1.0);
  return w * (std::sqrt(static_cast<double>(N)) / w.norm());
}

Eigen::MatrixXd sample_inputs(int N, std::size_t count, Seed seed) {
  Engine engine = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(N)));
  Eigen::MatrixXd X(N, static_cast<Eigen::Index>(count));
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    for (Eigen::Index i = 0; i < X.rows(); ++i) X(i, j) = normal(engine);
  return X;
}

Eigen::VectorXd teacher_labels(const Eigen::VectorXd& teacher, const Eigen::MatrixXd& X, ActivationKind teacher_act,
                               double S, Seed seed) {
  Eigen::VectorXd y = apply(teacher_act, X.transpose() * teacher);
  if (S > 0) {
    Engine engine = make_engine(seed);
    y += gaussian_vector(y.size(), engine, std::sqrt(S));
  }
  return y;
}

StudentState make_student(const Eigen::VectorXd& teacher, const OrderState& state, MethodKind method, Seed seed) {
  if (!state.valid()) throw DomainError("make_student needs a valid order state");
  const double N = static_cast<double>(teacher.size());
  const Eigen::VectorXd t_hat = teacher.normalized();
  Engine engine = make_engine(seed);
  Eigen::VectorXd u = gaussian_vector(teacher.size(), engine, 1.0);
  u -= u.dot(t_hat) * t_hat;
  u.normalize();
  const double length = is_normalized(method) ? state.L : state.Q;
  StudentState s;
  s.w = std::sqrt(N) * length * (state.R * t_hat + std::sqrt(std::max(0.0, 1 - state.R * state.R)) * u);
  s.gamma = is_normalized(method) ? state.Q : 1.0;
  return s;
}

OrderState order_parameters(const StudentState& student, const Eigen::VectorXd& teacher, MethodKind method) {
  const double N = static_cast<double>(teacher.size());
  const double norm = student.w.norm();
  OrderState out;
  out.L = norm / std::sqrt(N);
  out.R = norm > 0 ? std::clamp(teacher.dot(student.w) / (teacher.norm() * norm), -1.0, 1.0) : 0.0;
  out.Q = is_normalized(method) ? student.gamma : out.L;
  if (method == MethodKind::BN && student.bn_sigma > 0) out.Q *= out.L / student.bn_sigma;
  return out;
}

Eigen::VectorXd student_preactivation(const StudentState& student, const Eigen::MatrixXd& X, MethodKind method) {
  Eigen::VectorXd h = X.transpose() * student.w;
  if (!is_normalized(method)) return h;
  if (method == MethodKind::BN && student.bn_sigma > 0) return (student.gamma / student.bn_sigma) * h;
  const double scale = student.gamma * std::sqrt(static_cast<double>(student.w.size())) / student.w.norm();
  return scale * h;
}

bool sgd_step(StudentState& state, const Eigen::Ref<const Eigen::MatrixXd>& X,
              const Eigen::Ref<const Eigen::VectorXd>& y, const TeacherStudentConfig& cfg, double eta_w,
              double eta_gamma) {
  const double m = static_cast<double>(X.cols());
  const double sqrtN = std::sqrt(static_cast<double>(X.rows()));
  const ActivationKind act = cfg.act;
  Eigen::VectorXd w_next;
  double gamma_next = state.gamma;

  switch (cfg.method) {
    case MethodKind::VanillaSGD: {
      const Eigen::VectorXd h = X.transpose() * state.w;
      const Eigen::VectorXd delta = apply_derivative(act, h).cwiseProduct(y - apply(act, h));
      w_next = state.w + (eta_w / m) * (X * delta);
      break;
    }
    case MethodKind::WN:
    case MethodKind::WNGammaDecay: {
      const double norm = state.w.norm();
      const Eigen::VectorXd u = X.transpose() * state.w * (sqrtN / norm);  // normalized pre-activation / gamma
      const Eigen::VectorXd h_hat = state.gamma * u;
      const Eigen::VectorXd delta = apply_derivative(act, h_hat).cwiseProduct(y - apply(act, h_hat));
      const double zeta = cfg.method == MethodKind::WNGammaDecay ? cfg.zeta : 0.0;
      w_next = state.w + (eta_w / m) * ((state.gamma * sqrtN / norm) * (X * delta) -
                                        (delta.dot(h_hat) / (norm * norm)) * state.w);
      gamma_next = state.gamma + eta_gamma * (delta.dot(u) / m - zeta * state.gamma);
      break;
    }
    case MethodKind::BN: {
      const Eigen::VectorXd h = X.transpose() * state.w;
      const double mean = h.mean();
      const Eigen::VectorXd centered = h.array() - mean;
      const double sigma = std::max(std::sqrt(centered.squaredNorm() / m), kSigmaFloor);
      const Eigen::VectorXd h_hat = (state.gamma / sigma) * h;
      const Eigen::VectorXd delta = apply_derivative(act, h_hat).cwiseProduct(y - apply(act, h_hat));
      const double dh = delta.dot(h);
      // -dLoss/dh_i = (gamma/m) [delta_i / sigma - (h_i - mean) sum_k(delta_k h_k) / (m sigma^3)]
      const Eigen::VectorXd g = (state.gamma / m) * (delta / sigma - centered * (dh / (m * sigma * sigma * sigma)));
      w_next = state.w + eta_w * (X * g);
      gamma_next = state.gamma + eta_gamma * dh / (m * sigma);
      break;
    }
  }
  if (!w_next.allFinite() || !std::isfinite(gamma_next)) return false;
  state.w = std::move(w_next);
  state.gamma = gamma_next;
  return true;
}

RunResult run_experiment(const TeacherStudentConfig& cfg) {
  validate(cfg);
  if (cfg.M < 2) throw DomainError("M must be >= 2");
  const long P = cfg.sample_count();
  if (P < cfg.M) throw DomainError("need at least one full batch: P >= M");

  const Eigen::VectorXd teacher = make_teacher(cfg.N, derive_seed(cfg.seed, kTeacher));
  const Eigen::MatrixXd X = sample_inputs(cfg.N, static_cast<std::size_t>(P), derive_seed(cfg.seed, kInputs));
  const Eigen::VectorXd y = teacher_labels(teacher, X, cfg.teacher_act, cfg.S, derive_seed(cfg.seed, kNoise));

  StudentState student;
  {
    Engine engine = make_engine(derive_seed(cfg.seed, kInit));
    student.w = gaussian_vector(cfg.N, engine, 1.0);
    // Components outside the input span never reach the loss, so with P < N they would
    // stay frozen in w and add to the generalization error.
    if (cfg.init_in_span && P < cfg.N) {
      const Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
      const Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(cfg.N, P);
      student.w = basis * (basis.transpose() * student.w);
    }
    student.w *= cfg.init_norm * std::sqrt(static_cast<double>(cfg.N)) / student.w.norm();
    student.gamma = cfg.init_gamma;
  }

  RunResult out;
  auto refresh_bn_sigma = [&] {
    if (cfg.method != MethodKind::BN || !cfg.bn_train_stats) return;
    const Eigen::VectorXd h = X.transpose() * student.w;
    student.bn_sigma = std::max(std::sqrt((h.array() - h.mean()).square().mean()), kSigmaFloor);
  };
  auto train_loss = [&] {
    refresh_bn_sigma(); return half_mse(y, apply(cfg.act, student_preactivation(student, X, cfg.method))); };
  auto record = [&](int epoch, double loss) {
    out.order_trace.times.push_back(epoch);
    out.order_trace.states.push_back(order_parameters(student, teacher, cfg.method));
    out.train_loss_trace.push_back(loss);
  };

  double loss = train_loss();
  record(0, loss);

  Engine shuffle = make_engine(derive_seed(cfg.seed, kShuffle));
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(P));
  std::iota(perm.begin(), perm.end(), 0);
  const long batches = P / cfg.M;
  Eigen::MatrixXd Xp(cfg.N, batches * cfg.M);
  Eigen::VectorXd yp(batches * cfg.M);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double decay = std::pow(cfg.lr_decay, std::max(0, epoch - 1 - cfg.lr_decay_start));
    const double eta_w = cfg.eta * decay;
    const double eta_gamma = cfg.eta * cfg.gamma_lr_scale * decay;
    std::shuffle(perm.begin(), perm.end(), shuffle);
    for (Eigen::Index k = 0; k < Xp.cols(); ++k) {
      Xp.col(k) = X.col(perm[static_cast<std::size_t>(k)]);
      yp(k) = y(perm[static_cast<std::size_t>(k)]);
    }
    bool ok = true;
    for (long b = 0; b < batches && ok; ++b) {
      ok = sgd_step(student, Xp.middleCols(b * cfg.M, cfg.M), yp.segment(b * cfg.M, cfg.M), cfg, eta_w, eta_gamma);
    }
    const double next = ok ? train_loss() : std::numeric_limits<double>::quiet_NaN();
    const OrderState op = order_parameters(student, teacher, cfg.method);
    out.epochs_run = epoch;
    if (!ok || !std::isfinite(next) || !(op.L > 0) || op.L > kDivergenceThreshold ||
        std::abs(op.Q) > kDivergenceThreshold) {
      out.diverged = true;
      break;
    }
    record(epoch, next);
    const double change = std::abs(next - loss) / std::max(loss, 1e-300);
    loss = next;
    // An interpolating fit drives the loss to round-off, where the relative change never settles.
    if (change < cfg.tol || next <= kInterpolationFloor * out.train_loss_trace.front()) break;
  }
  out.order_trace.diverged = out.diverged;
  out.final_state = student;
  if (out.diverged) {
    out.gen_error = std::numeric_limits<double>::infinity();
    out.gen_error_mc = std::numeric_limits<double>::infinity();
    return out;
  }

  // Fresh noiseless test set, processed in blocks to bound memory.
  const std::size_t block = 1000;
  double sum = 0, sum_sq = 0;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < cfg.test_samples; start += block) {
    const std::size_t n = std::min(block, cfg.test_samples - start);
    const Eigen::MatrixXd Xt = sample_inputs(cfg.N, n, derive_seed(derive_seed(cfg.seed, kTest), start));
    const Eigen::VectorXd target = apply(cfg.teacher_act, Xt.transpose() * teacher);
    const Eigen::VectorXd pred = apply(cfg.act, student_preactivation(student, Xt, cfg.method));
    const Eigen::ArrayXd sq = (target - pred).array().square();
    sum += sq.sum();
    sum_sq += sq.square().sum();
    seen += n;
  }
  const double n = static_cast<double>(seen);
  out.gen_error_mc = sum / n;
  out.gen_error_mc_stderr = n > 1 ? std::sqrt(std::max(0.0, (sum_sq / n - out.gen_error_mc * out.gen_error_mc) / (n - 1)))
                                  : 0.0;
  const OrderState op = order_parameters(student, teacher, cfg.method);
  out.gen_error = cfg.teacher_act == ActivationKind::Identity
                      ? gen_integral(op.Q, op.R, ActivationKind::Identity, cfg.act)
                      : out.gen_error_mc;
  return out;
}

Trajectory run_online(const TeacherStudentConfig& cfg, const OrderState& initial, double t_end, double record_every) {
  validate(cfg);
  if (!(t_end > 0) || !(record_every > 0)) throw DomainError("run_online needs t_end > 0 and record_every > 0");
  // Batch statistics do not exist for M = 1; BN is simulated through its WN + gamma decay form.
  TeacherStudentConfig step_cfg = cfg;
  if (step_cfg.method == MethodKind::BN) step_cfg.method = MethodKind::WNGammaDecay;

  const Eigen::VectorXd teacher = make_teacher(cfg.N, derive_seed(cfg.seed, kTeacher));
  StudentState student = make_student(teacher, initial, step_cfg.method, derive_seed(cfg.seed, kInit));
  Engine engine = make_engine(derive_seed(cfg.seed, kInputs));
  std::normal_distribution<double> input(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.N)));
  std::normal_distribution<double> noise(0.0, std::sqrt(cfg.S));

  const double N = static_cast<double>(cfg.N);
  const auto steps = static_cast<long long>(std::llround(t_end * N));
  const auto stride = std::max(1LL, static_cast<long long>(std::llround(record_every * N)));
  const double eta_gamma = cfg.eta / N;

  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(order_parameters(student, teacher, step_cfg.method));
  Eigen::VectorXd x(cfg.N);
  Eigen::VectorXd y(1);
  for (long long j = 1; j <= steps; ++j) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = input(engine);
    y(0) = activate(cfg.teacher_act, teacher.dot(x)) + (cfg.S > 0 ? noise(engine) : 0.0);
    if (!sgd_step(student, x, y, step_cfg, cfg.eta, eta_gamma)) {
      traj.diverged = true;
      break;
    }
    if (j % stride == 0 || j == steps) {
      const OrderState op = order_parameters(student, teacher, step_cfg.method);
      traj.times.push_back(static_cast<double>(j) / N);
      traj.states.push_back(op);
      if (!(op.L > 0) || op.L > kDivergenceThreshold) {
        traj.diverged = true;
        break;
      }
    }
  }
  return traj;
}

}  // namespace bnlab
