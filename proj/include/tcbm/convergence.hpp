#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcbm/montecarlo.hpp"
#include "tcbm/stochint.hpp"

namespace tcbm {

enum class Identity { forward, backward, jacod_i, jacod_ii };

std::string_view to_string(Identity identity);
/// Throws ConfigError.
Identity parse_identity(std::string_view name);

/// Per-path data an r-axis integrand may be built from.
struct RContext {
  const TimeChangePath& lambda;
  const TimeChangePath& gamma;
  const BrownianPath& w;
};
using RProcessFactory = std::function<RProcess(const RContext&)>;
using IntegratorFactory = std::function<AdaptedIntegrator(
    const TimeChangePath& lambda, const TimeChangePath& gamma, std::uint64_t seed,
    std::uint64_t path_index)>;

struct StudySpec {
  Identity identity = Identity::forward;
  TimeChangeConfig timechange;
  /// forward, jacod_i.
  IntegrandSpec nu = IntegrandSpec::constant(1.0);
  /// backward, jacod_ii.
  RProcessFactory nu_tilde;
  /// jacod_i, jacod_ii; defaults to a flattened Brownian motion.
  IntegratorFactory integrator;
  VerifyOptions options;
};

/// dt0, dt0/2, ..., count levels.
std::vector<double> halving_levels(double dt0, int count);

/// One path of one identity at one grid step; Λ and W are drawn from
/// (seed, path_index) so every level sees the same Λ.
IntegralPair verify_path(const StudySpec& spec, double dt, std::uint64_t seed,
                         std::uint64_t path_index);

/// RMS and max of |lhs − rhs| over n_paths at each dt, with a fitted log-log
/// slope. Throws InvalidConfig for fewer than 4 levels.
ConvergenceTable convergence_study(const StudySpec& spec, std::span<const double> dts,
                                   std::size_t n_paths, std::uint64_t seed,
                                   const RunOptions& options = {});

}  // namespace tcbm
