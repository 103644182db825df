#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tcbm/montecarlo.hpp"
#include "tcbm/noise.hpp"
#include "tcbm/timechange.hpp"

namespace tcbm {

/// Market price of risk θ̃ on the r-axis.
struct ThetaFamily {
  enum class Kind { constant, of_time, of_gamma };

  Kind kind = Kind::constant;
  double theta0 = 0.0;
  /// of_time: r ↦ f(r); of_gamma: Γ_r ↦ g(Γ_r).
  std::function<double(double)> f;
  /// Declared sup |θ̃|; required by the exponential-moment gate.
  std::optional<double> sup_abs;
  bool h0_measurable = true;
  std::string name;

  static ThetaFamily constant(double theta0);
  static ThetaFamily of_time(std::function<double(double)> f, std::optional<double> sup_abs,
                             std::string name = "f(r)");
  static ThetaFamily of_gamma(std::function<double(double)> g, std::optional<double> sup_abs,
                              std::string name = "g(Γ_r)");

  double operator()(double r, const TimeChangePath& gamma) const;
};

struct MomentGate {
  bool pass = false;
  double bound = 0.0;  // exp(R·sup θ̃²)
  std::string reason;
};

MomentGate exp_moment_gate(const ThetaFamily& theta, double range_end);

struct MarketSpec {
  double x = 1.0;
  double p = 2.0;  // p == 1 selects log utility
  double s0 = 10.0;
  ThetaFamily theta = ThetaFamily::constant(1.0);
  TimeChangeConfig timechange;
  double dt = 1.0 / 256.0;
  /// Extra uniform r-points for r-axis integrals; <= 0 keeps only the images
  /// of the t-grid, which is what makes ν̂ and ν̃∘Λ share every increment.
  double dr = 0.0;
};

/// Throws InvalidConfig naming the offending field.
void validate(const MarketSpec& spec);

/// One realization of the market. The r-grid contains Λ_{t} and Λ_{t-} of
/// every t-node; r_index / r_index_left locate them.
struct MarketPaths {
  TimeChangePath lambda;
  TimeChangePath gamma;
  BrownianPath w;
  TimeChangedPath m;
  std::vector<double> r_grid;
  std::vector<std::size_t> r_index;
  std::vector<std::size_t> r_index_left;
  std::vector<double> w_r;      // W on the r-grid
  std::vector<double> b_r;      // B_r = ∫_0^r θ̃ du
  std::vector<double> q_r;      // ∫_0^r θ̃² du
  std::vector<double> theta_r;  // θ̃ on the r-grid
  GridPath a;                   // A = B∘Λ on the t-grid
  GridPath s;                   // S = S_0 + M + A
  std::vector<double> theta_t;       // θ̃(Λ_t)
  std::vector<double> theta_t_left;  // θ̃(Λ_{t-})
};

/// Throws NotStrictlyIncreasing, NotLambdaAdapted (f(r) with a jumping Λ)
/// and anything the samplers throw.
MarketPaths build_market_paths(const MarketSpec& spec, std::uint64_t seed,
                               std::uint64_t path_index = 0);

enum class Axis { t_axis, r_axis };

struct StrategyPath {
  Axis axis = Axis::t_axis;
  std::vector<double> grid;
  std::vector<double> values;       // position after each node
  std::vector<double> values_left;  // position for the jump increment at a node
  /// Exact gain ∫ν dS under continuous trading between nodes, when known;
  /// empty otherwise. Jumps of the driver are crossed with the position held.
  std::vector<double> gain;
  std::vector<double> gain_left;
  std::string tag;
};

/// log E(∫π dX) on the r-grid, π = θ̃/p.
std::vector<double> optimal_log_exponential(const MarketSpec& spec, const MarketPaths& paths);

/// ν̃ = x·π·E(∫π dX) on the r-grid. Throws NotH0Measurable, MomentGateFailed.
StrategyPath optimal_strategy_tilde(const MarketSpec& spec, const MarketPaths& paths);
/// ν̂ from M and A on the t-grid. Throws as optimal_strategy_tilde.
StrategyPath optimal_strategy_hat(const MarketSpec& spec, const MarketPaths& paths);

/// max over t-nodes of |ν̂ − ν̃∘Λ|, left values included.
double pullback_deviation(const StrategyPath& hat, const StrategyPath& tilde,
                          const MarketPaths& paths);

StrategyPath scaled(StrategyPath strategy, double factor);
StrategyPath constant_amount(const MarketPaths& paths, double units);
/// Buys f·x/S_0 units at time 0 and holds them.
StrategyPath buy_and_hold(const MarketSpec& spec, const MarketPaths& paths, double fraction);

struct WealthPath {
  std::vector<double> values;
  std::vector<double> values_left;
  bool admissible = true;
  double terminal() const { return values.back(); }
};

/// V = x + left-point sums of ν against dS = dM + dA (t-axis) or
/// dX = dW + θ̃ dr (r-axis). Throws AxisMismatch.
WealthPath wealth_process(double x, const StrategyPath& strategy, const MarketPaths& paths,
                          Axis driver);

/// x + gain when the strategy carries its exact gain, else wealth_process.
WealthPath strategy_wealth(double x, const StrategyPath& strategy, const MarketPaths& paths);

double utility(double v, double p);

/// (x^{1−p}/(1−p))·exp{∫_{Λ_t}^{Λ_T} (1−p)/(2p)·θ̃² du}. Throws PEqualsOne.
double value_closed_form_power(const MarketSpec& spec, const MarketPaths& paths, double t);
/// log x + ∫_0^{Λ_t} θ̃ dW + ½∫_0^{Λ_T} θ̃² du. Throws PNotOne.
double value_closed_form_log(const MarketSpec& spec, const MarketPaths& paths, double t);
double value_closed_form(const MarketSpec& spec, const MarketPaths& paths, double t);

using StrategyFactory = std::function<StrategyPath(const MarketSpec&, const MarketPaths&)>;

struct NamedStrategy {
  std::string tag;
  StrategyFactory make;
  /// When false, rejected paths are counted but do not fail the study.
  bool require_admissible = true;
};

NamedStrategy zero_strategy();
NamedStrategy optimal_hat_strategy();
NamedStrategy optimal_tilde_strategy();
/// 0.5·ν̂, 1.5·ν̂, 0.25·x units, buy-and-hold of half the initial wealth.
/// These are competitors: a path on which the wealth would turn negative is
/// stopped at zero wealth (U(0), which is -inf for p >= 1) rather than rejected.
std::vector<NamedStrategy> perturbation_battery();

struct StrategyEstimate {
  std::string tag;
  Estimate value;             // E[U(V_T)]
  std::size_t rejected = 0;   // inadmissible or non-finite utility
  std::size_t ruined = 0;     // competitor paths absorbed at zero wealth
  Estimate diff_vs_first;     // paired U − U_first under common random numbers
};

struct MarketStudy {
  std::vector<StrategyEstimate> strategies;
  Estimate closed_form;  // per-path closed-form value at t = 0
  std::size_t n_paths = 0;
};

/// Evaluates every strategy on the same paths. Throws TooManyInadmissible when
/// more than 0.1% of the paths of a strategy with require_admissible are
/// rejected. A mean of -inf means some competitor path was ruined with p >= 1.
MarketStudy run_market_study(const MarketSpec& spec,
                             const std::vector<NamedStrategy>& strategies,
                             std::size_t n_paths, std::uint64_t seed,
                             const RunOptions& options = {});

/// E[U(V_T)] of one strategy.
StrategyEstimate evaluate_strategy_mc(const MarketSpec& spec, const NamedStrategy& strategy,
                                      std::size_t n_paths, std::uint64_t seed,
                                      const RunOptions& options = {});

}  // namespace tcbm
