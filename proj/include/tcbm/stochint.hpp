#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tcbm/noise.hpp"
#include "tcbm/timechange.hpp"

namespace tcbm {

/// What an integrand may read when evaluated at time s: left limits at s and
/// grid history strictly before s.
struct PathView {
  double s = 0.0;
  double lambda_left = 0.0;  // Λ_{s-}
  double m_left = 0.0;       // M_{s-}
  std::span<const double> times;
  std::span<const double> lambda;
  std::span<const double> m;
};

namespace family {
struct Constant {
  double c = 0.0;
};
struct FunctionOfTime {
  std::function<double(double)> f;
};
struct FunctionOfLeftLimitM {
  std::function<double(double)> g;
};
struct FunctionOfLeftLimitLambda {
  std::function<double(double)> h;
};
/// The callback must only depend on the view and be continuous in it; this is
/// not checked.
struct GeneralCallback {
  std::function<double(const PathView&)> fn;
};
}  // namespace family

struct IntegrandSpec {
  using Family =
      std::variant<family::Constant, family::FunctionOfTime,
                   family::FunctionOfLeftLimitM, family::FunctionOfLeftLimitLambda,
                   family::GeneralCallback>;

  Family family;
  std::string name;
  /// Analytic bound on E[∫ ν² dΛ], if known.
  std::optional<double> square_integrability_bound;

  double operator()(const PathView& view) const;
  bool is_constant() const {
    return std::holds_alternative<family::Constant>(family);
  }
  bool reads_m() const;

  static IntegrandSpec constant(double c);
  static IntegrandSpec of_time(std::function<double(double)> f, std::string name = "f(s)");
  static IntegrandSpec of_left_m(std::function<double(double)> g,
                                 std::string name = "g(M_{s-})");
  static IntegrandSpec of_left_lambda(std::function<double(double)> h,
                                      std::string name = "h(Λ_{s-})");
  static IntegrandSpec callback(std::function<double(const PathView&)> fn,
                                std::string name = "callback");
};

/// A process on the r-axis, evaluated pointwise at r.
using RProcess = std::function<double(double)>;

RProcess constant_process(double c);
/// r ↦ g(Γ_r). Holds a copy of Γ.
RProcess process_of_gamma(const TimeChangePath& gamma, std::function<double(double)> g);
/// r ↦ f(r).
RProcess process_of_r(std::function<double(double)> f);
/// r ↦ W_r. `w` must outlive the process and be refined wherever it is read.
RProcess brownian_process(const BrownianPath& w);

/// Σ after[k]·(x_left[k+1] − x[k]) + at_jump[k+1]·(x[k+1] − x_left[k+1]).
/// The second term vanishes off jumps, where x_left == x.
double left_point_sum(std::span<const double> after, std::span<const double> at_jump,
                      std::span<const double> x, std::span<const double> x_left);

/// Λ_t and Λ_{t-} of every node of `m` (left value first at jumps) together
/// with the uniform points k·dr up to Λ at the last node. dr <= 0 keeps only
/// the images. A uniform point within kTimeTolerance of an image is dropped.
std::vector<double> make_r_grid(const TimeChangedPath& m, double dr);

/// Σ f(r_i)·(W_{r_{i+1}} − W_{r_i}) over the grid. Throws GridNotRefined.
double ito_integral_dW(const RProcess& f, const BrownianPath& w,
                       std::span<const double> r_grid);
/// Same over every stored time of `w` in [a, b]; a and b must be stored.
double ito_integral_dW(const RProcess& f, const BrownianPath& w, double a, double b);

/// ν at each grid node of `m`, reading only data strictly before the node.
std::vector<double> integrand_on_grid(const IntegrandSpec& nu, const TimeChangedPath& m);

/// Left-point sum of ν against M over the nodes of `m` up to t. The jump
/// increment M_τ − M_{τ−} is weighted by ν at τ, which sees only data before τ.
/// Throws GridMissingJump if a jump of Λ up to t is missing from the grid and
/// GridNotRefined if t is not a node.
double ito_integral_dM(const IntegrandSpec& nu, const TimeChangePath& lambda,
                       const TimeChangedPath& m, double t);

/// Left-point Riemann–Stieltjes sum of per-node values against a grid path.
double stieltjes_integral(std::span<const double> nu, const GridPath& a, double t);
double stieltjes_integral(const IntegrandSpec& nu, const TimeChangedPath& m,
                          const GridPath& a, double t);

/// ν evaluated at an arbitrary s with views clipped at s. Reads W at Λ_{s-}
/// when the family needs M.
double evaluate_at(const IntegrandSpec& nu, double s, const TimeChangePath& lambda,
                   const BrownianPath& w, const TimeChangedPath& m);

/// r ↦ ν(Γ_r) with path views clipped at Γ_r. Throws InverseMismatch if
/// `gamma` is not the generalized inverse of `lambda`. All arguments must
/// outlive the returned process.
RProcess compose_with_inverse(const IntegrandSpec& nu, const TimeChangePath& lambda,
                              const TimeChangePath& gamma, const BrownianPath& w,
                              const TimeChangedPath& m);

struct LambdaAdaptedReport {
  bool pass = true;
  std::size_t jump_index = 0;  // first violating jump
  double jump_time = 0.0;
  double interval_left = 0.0;
  double interval_right = 0.0;
  double deviation = 0.0;
  std::string message() const;
};

/// Probe points per jump interval [Λ_{τ−}, Λ_τ], endpoints included.
std::vector<double> adaptedness_probes(const TimeChangePath& lambda, int probes = 8);

/// Max over probes of |ν̃_r − ν̃_{Λ_{τ−}}| must stay within tol for each jump.
LambdaAdaptedReport check_lambda_adapted(const RProcess& nu_tilde,
                                         const TimeChangePath& lambda,
                                         double tol = 1e-9, int probes = 8);

struct IntegralPair {
  double lhs = 0.0;
  double rhs = 0.0;
  double abs_diff = 0.0;
  double dt = 0.0;
  std::uint64_t seed = 0;
};

struct VerifyOptions {
  /// Uniform r-step added to the image grid; 0 means dt, negative means none.
  double dr = 0.0;
  /// verify_backward: refuse non-Λ-adapted integrands.
  bool enforce_adapted = true;
  double adapted_tol = 1e-9;
  std::uint64_t seed = 0;
};

/// ∫_0^t ν dM against ∫_0^{Λ_t} ν(Γ_r) dW on one realization of (Λ, W).
IntegralPair verify_forward(const IntegrandSpec& nu, const TimeChangePath& lambda,
                            BrownianPath& w, double t, double dt,
                            const VerifyOptions& options = {});

/// ∫_0^{Λ_t} ν̃ dW against ∫_0^t ν̃∘Λ dM, the latter split at each jump into
/// the continuous part and ν̃(Λ_{τ−})·(M_τ − M_{τ−}). Throws NotLambdaAdapted
/// unless options.enforce_adapted is false. ν̃ may read W only at grid times.
IntegralPair verify_backward(const RProcess& nu_tilde, const TimeChangePath& lambda,
                             BrownianPath& w, double t, double dt,
                             const VerifyOptions& options = {});

/// A Λ-adapted integrator S on the r-axis.
struct AdaptedIntegrator {
  std::string name;
  std::function<double(double)> value;
  /// Makes value() readable at the given r; may be empty.
  std::function<void(std::span<const double>)> prepare;
};

/// S_r = r.
AdaptedIntegrator identity_integrator();
/// S_r = g(Γ_r). Holds a copy of Γ.
AdaptedIntegrator gamma_integrator(const TimeChangePath& gamma,
                                   std::function<double(double)> g);
/// S_r = B_{c(r)} with c(r) = r minus the length of jump images below r, B a
/// Brownian motion on the auxiliary stream of (seed, path_index).
AdaptedIntegrator flattened_brownian(const TimeChangePath& lambda, std::uint64_t seed,
                                     std::uint64_t path_index);

/// Part i: ∫_0^t ν dS_Λ against ∫_0^{Λ_t} ν(Γ_{r−}) dS.
IntegralPair verify_jacod_i(const IntegrandSpec& nu, const TimeChangePath& lambda,
                            BrownianPath& w, const AdaptedIntegrator& s, double t,
                            double dt, const VerifyOptions& options = {});
/// Part ii: ∫_0^{Λ_t} ν̃ dS against ∫_0^t ν̃(Λ_{u−}) dS_Λ.
IntegralPair verify_jacod_ii(const RProcess& nu_tilde, const TimeChangePath& lambda,
                             BrownianPath& w, const AdaptedIntegrator& s, double t,
                             double dt, const VerifyOptions& options = {});

struct SquareIntegrabilityReport {
  bool pass = false;
  std::vector<double> dts;
  std::vector<double> estimates;
  std::vector<double> std_errors;
  std::string reason;
};

/// Monte Carlo estimate of E[∫_0^T ν² dΛ] on each grid in `dts` (coarse to
/// fine). Fails when the estimate is non-finite, grows by more than
/// `growth_tol` relative between the last two grids, or exceeds a declared
/// bound by more than 3 standard errors.
SquareIntegrabilityReport square_integrability_gate(const IntegrandSpec& nu,
                                                    const TimeChangeConfig& config,
                                                    std::span<const double> dts,
                                                    std::size_t n_paths,
                                                    std::uint64_t seed,
                                                    double growth_tol = 0.1);

}  // namespace tcbm
