#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "bnlab/core.hpp"
#include "bnlab/dynamics.hpp"

namespace bnlab {

/// Full description of one teacher-student run.
struct TeacherStudentConfig {
  int N = 1024;                                      // input dimension
  int M = 32;                                        // batch size
  long P = 0;                                        // training samples; 0 derives round(alpha N)
  double alpha = 1.0;                                // load P / N
  double S = 0.25;                                   // label-noise variance
  double zeta = 0.0;                                 // gamma decay (WNGammaDecay only)
  double eta = 0.05;                                 // learning rate for w
  double gamma_lr_scale = 1.0;                       // gamma learning rate = eta * gamma_lr_scale
  double lr_decay = 1.0;                             // per-epoch geometric factor on both rates
  int lr_decay_start = 0;                            // first epoch that is decayed
  ActivationKind act = ActivationKind::Identity;     // student activation
  ActivationKind teacher_act = ActivationKind::Identity;
  MethodKind method = MethodKind::VanillaSGD;
  Seed seed = 42;
  int epochs = 5000;                                 // epoch cap
  double tol = 1e-6;                                 // relative train-loss change that stops training
  double init_norm = 1.0;                            // initial L = |w| / sqrt(N)
  double init_gamma = 1.0;                           // initial gamma of the normalized methods
  bool init_in_span = true;                          // project the initial w onto span of the inputs
  bool bn_train_stats = true;                        // BN inference uses the training-set std of h
  std::size_t test_samples = 20000;                  // fresh test set for the MC gen-error cross-check

  long sample_count() const;
};

/// Student parameters. beta_shift is kept at 0 throughout. bn_sigma is the BN inference
/// scale; 0 selects the population value |w| / sqrt(N).
struct StudentState {
  Eigen::VectorXd w;
  double gamma = 1.0;
  double beta_shift = 0.0;
  double bn_sigma = 0.0;
};

/// Columns are samples.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

struct RunResult {
  Trajectory order_trace;                 // t = epoch
  std::vector<double> train_loss_trace;   // half mean-squared error per epoch
  double gen_error = 0;                   // closed-form integral at the final (gamma, R)
  double gen_error_mc = 0;                // fresh-test-set estimate
  double gen_error_mc_stderr = 0;
  bool diverged = false;
  int epochs_run = 0;
  StudentState final_state;
};

/// Gaussian teacher rescaled so (1/N) w*^T w* = 1 exactly.
Eigen::VectorXd make_teacher(int N, Seed seed);

/// N x count matrix of i.i.d. N(0, 1/N) entries.
Eigen::MatrixXd sample_inputs(int N, std::size_t count, Seed seed);

/// Labels g*(w*^T x) + s with per-example noise s ~ N(0, S) drawn from `seed`.
Eigen::VectorXd teacher_labels(const Eigen::VectorXd& teacher, const Eigen::MatrixXd& X, ActivationKind teacher_act,
                               double S, Seed seed);

/// A student whose order parameters are exactly `state` with respect to `teacher`
/// (Q becomes gamma, or the length of w for vanilla SGD).
StudentState make_student(const Eigen::VectorXd& teacher, const OrderState& state, MethodKind method, Seed seed);

/// Order parameters of a student. Normalized methods: Q = gamma, L = |w| / sqrt(N); for BN with
/// a stored inference scale, Q = gamma (|w| / sqrt(N)) / bn_sigma, the gain the test-time map
/// applies to the unit-variance pre-activation.
/// Vanilla SGD: Q = L = |w| / sqrt(N). R = w*^T w / (|w*| |w|) in both cases.
OrderState order_parameters(const StudentState& student, const Eigen::VectorXd& teacher, MethodKind method);

/// Inference-mode pre-activation. BN divides by bn_sigma, or by the population scale
/// |w| / sqrt(N) of h = w^T x for x ~ N(0, I/N) when bn_sigma is 0.
Eigen::VectorXd student_preactivation(const StudentState& student, const Eigen::MatrixXd& X, MethodKind method);

/// One SGD step on the half squared error of the batch (columns of X).
///   VanillaSGD: w += eta mean(delta x).
///   WN / WNGammaDecay: w += eta mean(delta (gamma sqrt(N) / |w| x - (w~^T x / |w|^2) w)),
///     gamma += eta_gamma (mean(delta w~^T x) / gamma - zeta gamma), zeta used only by WNGammaDecay.
///   BN: y_hat = g(gamma h / sigma_B), h = w^T x, sigma_B the biased batch standard deviation
///     (floored at 1e-12), with the exact gradient through sigma_B.
/// Returns false (state untouched) when the update would be non-finite.
bool sgd_step(StudentState& state, const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
              const TeacherStudentConfig& cfg, double eta_w, double eta_gamma);

/// Trains on a fixed data set in shuffled, without-replacement epochs (incomplete final
/// batches are dropped) until the relative change of the train loss falls below tol or
/// the epoch cap is reached.
RunResult run_experiment(const TeacherStudentConfig& cfg);

/// Online learning: every step draws a fresh (x, y), batch size 1, gamma rate eta / N.
/// Records order parameters at t = j / N every `record_every` units of t.
Trajectory run_online(const TeacherStudentConfig& cfg, const OrderState& initial, double t_end,
                      double record_every = 1.0);

}  // namespace bnlab
