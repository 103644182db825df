#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tcbm/convergence.hpp"
#include "tcbm/montecarlo.hpp"
#include "tcbm/portfolio.hpp"
#include "tcbm/timechange.hpp"

namespace tcbm {

enum class ExperimentKind { simulate, verify_cov, optimize, convergence, martingale_test };

std::string_view to_string(ExperimentKind kind);
/// Accepts the subcommand spelling (verify-cov, martingale-test, ...).
ExperimentKind parse_experiment_kind(std::string_view name);

/// Command-line values; each replaces the config key of the same name.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<double> dt;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  bool serial = false;
};

/// scale·base(frequency·x) + shift; base "reciprocal_gap" is 1/(pole − x).
struct FunctionSpec {
  std::string base = "identity";
  double scale = 1.0;
  double shift = 0.0;
  double frequency = 1.0;
  double pole = 1.0;

  std::function<double(double)> make() const;
  std::string label(std::string_view arg) const;
};

/// [integrand] section. Families constant, time, left_lambda, left_m live on
/// the t-axis; constant, gamma, r, brownian on the r-axis.
struct IntegrandConfig {
  std::string family = "constant";
  double value = 1.0;
  FunctionSpec function;
  std::optional<double> bound;

  bool t_axis() const;
  bool r_axis() const;
  IntegrandSpec make_nu() const;
  RProcessFactory make_nu_tilde() const;
  std::string label() const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::simulate;
  std::string id;
  std::string source;       // config file path as given
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::size_t paths = 1000;
  double dt = 1.0 / 128.0;
  std::vector<double> dt_levels;  // convergence
  std::optional<double> dt_override;
  std::filesystem::path out;
  RunOptions run;

  TimeChangeConfig timechange;

  // verify-cov, convergence
  Identity identity = Identity::forward;
  IntegrandConfig integrand;
  std::string integrator = "flattened_brownian";
  VerifyOptions verify;
  double min_slope = 0.4;
  std::optional<double> tolerance;
  std::size_t gate_paths = 1000;

  // optimize
  MarketSpec market;
  std::string strategy = "hat";  // hat (t-axis) or tilde (r-axis)
  bool battery = true;
  std::size_t pullback_paths = 100;

  // simulate, martingale-test
  std::size_t export_paths = 0;
  std::vector<double> times;
  double drift_perturbation = 0.0;

  /// Arguments that reproduce this run, starting with the subcommand.
  std::vector<std::string> command() const;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Parses TOML text. Throws Error(ConfigError) naming the offending field;
/// the config's own `experiment` key, if present, must equal `kind`.
ExperimentConfig parse_experiment_config(std::string_view toml_text, ExperimentKind kind,
                                         const Overrides& overrides,
                                         std::string source = "<string>");
ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        ExperimentKind kind, const Overrides& overrides);

struct ExperimentOutcome {
  bool pass = false;
  std::vector<std::string> failures;  // one line per failed band
};

/// Runs the experiment and writes results.csv, summary.json and manifest.json
/// into config.out.
ExperimentOutcome run_experiment(const ExperimentConfig& config);

/// Load, run and map the outcome to an exit code: 0 when every band passes,
/// 1 on a failed band or numerical failure, 2 on a configuration error.
int run_cli(ExperimentKind kind, const std::filesystem::path& config_file,
            const Overrides& overrides, std::ostream& log);

}  // namespace tcbm
