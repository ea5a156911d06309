// bnlab <command> --config <path> --out <dir> [--seed N] [--jobs K]
// BNLAB_OUT supplies the output directory when --out is absent.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "bnlab/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Batch-normalization teacher-student lab"};
  app.require_subcommand(1);

  bnlab::ExperimentSpec spec;
  std::string config, out;
  bnlab::Seed seed = 0;
  int jobs = 1;

  for (auto c : {bnlab::Command::Dynamics, bnlab::Command::Simulate, bnlab::Command::Statmech, bnlab::Command::Decompose,
                 bnlab::Command::Figure1a, bnlab::Command::Figure1b}) {
    auto* sub = app.add_subcommand(std::string(bnlab::to_string(c)));
    sub->add_option("--config", config, "JSON configuration or manifest.json")->required();
    sub->add_option("--out", out, "output directory (default: $BNLAB_OUT)");
    sub->add_option("--seed", seed, "base seed (default: config value or 42)");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->callback([&spec, c] { spec.command = c; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bnlab::kExitConfig;
  }

  if (out.empty())
    if (const char* env = std::getenv("BNLAB_OUT")) out = env;
  if (out.empty()) {
    std::cerr << "config error: no output directory (--out or BNLAB_OUT)\n";
    return bnlab::kExitConfig;
  }

  spec.config_path = config;
  spec.out_dir = out;
  spec.jobs = jobs;
  for (auto* sub : app.get_subcommands())
    if (sub->get_option("--seed")->count() > 0) spec.seed = seed;

  try {
    return bnlab::run(spec, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return bnlab::kExitDiverged;
  }
}
