#include <iostream>
#include <string>
#include <utility>

#include <CLI11.hpp>

#include "tcbm/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Time-changed Brownian motion experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("tcbm ") + TCBM_VERSION_STRING);

  std::string config;
  tcbm::Overrides ov;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  double dt = 0.0;
  std::string out;
  std::size_t workers = 0;

  const std::pair<tcbm::ExperimentKind, const char*> kinds[] = {
      {tcbm::ExperimentKind::simulate, "sample Lambda and M, check moments"},
      {tcbm::ExperimentKind::verify_cov, "both sides of a change-of-variable identity at one dt"},
      {tcbm::ExperimentKind::optimize, "optimal strategy value and perturbation battery"},
      {tcbm::ExperimentKind::convergence, "rms of an identity over halving dt levels"},
      {tcbm::ExperimentKind::martingale_test, "increment orthogonality of M"}};
  for (const auto& [kind, what] : kinds) {
    auto* sub = app.add_subcommand(std::string(tcbm::to_string(kind)), what);
    sub->add_option("--config", config, "TOML experiment config")->required();
    sub->add_option("--seed", seed, "master seed (overrides seed)");
    sub->add_option("--paths", paths, "number of paths (overrides paths)");
    sub->add_option("--dt", dt, "grid step, or coarsest level for convergence (overrides dt)");
    sub->add_option("--out", out, "output directory (overrides out)");
    sub->add_flag("--serial", ov.serial, "single-threaded, bit-reproducible run");
    sub->add_option("--workers", workers, "worker threads, 0 = all cores (overrides workers)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) ov.seed = seed;
  if (sub->count("--paths")) ov.paths = paths;
  if (sub->count("--dt")) ov.dt = dt;
  if (sub->count("--out")) ov.out = out;
  if (sub->count("--workers")) ov.workers = workers;

  return tcbm::run_cli(tcbm::parse_experiment_kind(sub->get_name()), config, ov, std::cerr);
}
