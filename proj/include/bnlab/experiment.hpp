#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "bnlab/core.hpp"
#include "bnlab/dynamics.hpp"
#include "bnlab/sgd_lab.hpp"
#include "bnlab/statmech.hpp"

namespace bnlab {

inline constexpr const char* kVersion = "1.0.0";

/// Commands of the command-line front end.
enum class Command { Dynamics, Simulate, Statmech, Decompose, Figure1a, Figure1b };

std::string_view to_string(Command c);
std::optional<Command> parse_command(std::string_view name);

/// Raised for malformed or invalid configuration; carries every diagnostic found.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

/// Runs f(i) for i in [0, n) on `jobs` threads. Each index is handled exactly once and the
/// caller stores results by index, so the outcome does not depend on `jobs`.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        f(i);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(workers, n); ++t) pool.emplace_back(work);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

/// An alpha sweep of teacher-student runs; every point averages `repeats` seeds.
struct SweepSpec {
  std::string name;
  TeacherStudentConfig base;
  std::vector<double> alphas;
  int repeats = 1;
  bool required = true;
};

struct SweepPoint {
  double alpha = 0;
  double gen_error_sim = 0;        // mean over repeats
  double gen_error_sim_spread = 0; // standard error over repeats (0 for one repeat)
  double gen_error_theory = 0;     // NaN when no closed form applies
  MethodKind method = MethodKind::VanillaSGD;
  int M = 0;
  double zeta = 0;                 // the run's zeta; for BN the equivalent 1/(2M) (linear) or 1/(4M) (ReLU)
  Seed seed = 0;                   // seed of the first repeat; repeat r > 0 uses derive_seed(seed, r)
  bool diverged = false;
};

/// Seed of point k of a sweep.
Seed sweep_point_seed(Seed base, std::size_t k);

/// Closed-form reference for a run: eps_id_ord (vanilla, linear), eps_relu_ord (vanilla, ReLU),
/// eps_id_wn with the run's zeta (WN + gamma decay, linear) or zeta = 1/(2M) (BN, linear).
/// NaN at poles and where no closed form exists.
double sweep_theory(const TeacherStudentConfig& cfg, double alpha);

std::vector<SweepPoint> run_sweep(const SweepSpec& spec, int jobs);

/// CSV with header alpha,gen_error_sim,gen_error_theory,method,M,zeta,seed.
std::string sweep_csv(const std::vector<SweepPoint>& points);

/// CSV with header epoch,Q,R,L,train_loss.
std::string run_trace_csv(const RunResult& r);

/// Inverse of sweep_csv, curve_csv and trajectory_csv / run_trace_csv (the first column is
/// read as time, train_loss is ignored). DomainError on a malformed header or row.
std::vector<SweepPoint> parse_sweep_csv(std::string_view text);
std::vector<GenCurvePoint> parse_curve_csv(std::string_view text);
Trajectory parse_trajectory_csv(std::string_view text);

/// Data and student for the decomposition audit: an identity teacher with label noise S, a
/// student w = w* + student_noise * xi, and gamma at the PN loss minimum.
struct DecomposeFixture {
  Dataset data;
  StudentState student;
};
DecomposeFixture make_decompose_fixture(int N, long P, double S, double student_noise, Seed seed);

/// Every violation in a configuration file, without running anything. The command is taken
/// from `command` or, failing that, from the file's "command" field.
std::vector<std::string> validate_config(const std::filesystem::path& config_path,
                                         std::optional<Command> command = std::nullopt);

struct ExperimentSpec {
  Command command = Command::Figure1a;
  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  std::optional<Seed> seed;        // overrides the config; 42 when neither sets it
  int jobs = 1;
};

/// Exit status of `run`.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDiverged = 2;

/// Executes a command, writes its files and manifest.json into out_dir, and returns the exit
/// status (1 on configuration errors, 2 if a required run diverged). Diagnostics go to `log`.
int run(const ExperimentSpec& spec, std::ostream& log);

}  // namespace bnlab
