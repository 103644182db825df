#include "tcbm/convergence.hpp"

#include <cmath>

#include "tcbm/error.hpp"

namespace tcbm {

std::string_view to_string(Identity identity) {
  switch (identity) {
    case Identity::forward: return "forward";
    case Identity::backward: return "backward";
    case Identity::jacod_i: return "jacod_i";
    case Identity::jacod_ii: return "jacod_ii";
  }
  return "unknown";
}

Identity parse_identity(std::string_view name) {
  for (Identity id : {Identity::forward, Identity::backward, Identity::jacod_i,
                      Identity::jacod_ii}) {
    if (name == to_string(id)) return id;
  }
  throw Error(ErrorCode::ConfigError, "unknown identity '" + std::string(name) + "'");
}

std::vector<double> halving_levels(double dt0, int count) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i) out.push_back(std::ldexp(dt0, -i));
  return out;
}

IntegralPair verify_path(const StudySpec& spec, double dt, std::uint64_t seed,
                         std::uint64_t path_index) {
  const TimeChangeConfig& tc = spec.timechange;
  const TimeChangePath lambda = sample_timechange(tc, seed, path_index);
  BrownianPath w(seed, path_index, rng::StreamId::brownian, tc.market_horizon);
  VerifyOptions options = spec.options;
  options.seed = seed;
  const double t = tc.horizon;

  const bool needs_gamma = spec.identity == Identity::backward ||
                           spec.identity == Identity::jacod_ii || spec.integrator;
  const TimeChangePath gamma = needs_gamma ? generalized_inverse(lambda) : lambda;
  auto integrator = [&] {
    return spec.integrator ? spec.integrator(lambda, gamma, seed, path_index)
                           : flattened_brownian(lambda, seed, path_index);
  };
  auto nu_tilde = [&] {
    if (!spec.nu_tilde) throw Error(ErrorCode::ConfigError, "missing r-axis integrand");
    return spec.nu_tilde(RContext{lambda, gamma, w});
  };

  switch (spec.identity) {
    case Identity::forward:
      return verify_forward(spec.nu, lambda, w, t, dt, options);
    case Identity::backward:
      return verify_backward(nu_tilde(), lambda, w, t, dt, options);
    case Identity::jacod_i:
      return verify_jacod_i(spec.nu, lambda, w, integrator(), t, dt, options);
    case Identity::jacod_ii:
      return verify_jacod_ii(nu_tilde(), lambda, w, integrator(), t, dt, options);
  }
  throw Error(ErrorCode::ConfigError, "unknown identity");
}

ConvergenceTable convergence_study(const StudySpec& spec, std::span<const double> dts,
                                   std::size_t n_paths, std::uint64_t seed,
                                   const RunOptions& options) {
  if (dts.size() < 4) throw Error(ErrorCode::InvalidConfig, "need at least 4 levels");
  ConvergenceTable table;
  for (double dt : dts) {
    const auto diffs = parallel_map<double>(
        n_paths, [&](std::size_t i) { return verify_path(spec, dt, seed, i).abs_diff; },
        options);
    table.levels.push_back(rms_level(diffs, dt));
  }
  fit_convergence(table);
  return table;
}

}  // namespace tcbm
