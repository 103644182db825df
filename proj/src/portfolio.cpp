#include "tcbm/portfolio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tcbm/error.hpp"
#include "tcbm/stochint.hpp"

namespace tcbm {

namespace {

void require_optimizable(const MarketSpec& spec) {
  if (!spec.theta.h0_measurable) {
    throw Error(ErrorCode::NotH0Measurable, "θ̃ '" + spec.theta.name + "' is not H_0-measurable");
  }
  const MomentGate gate = exp_moment_gate(spec.theta, spec.timechange.market_horizon);
  if (!gate.pass) {
    throw Error(ErrorCode::MomentGateFailed, "θ̃ '" + spec.theta.name + "': " + gate.reason);
  }
}

// Increment of log E(∫π dX) over one step, π = θ/p, with the drift and the
// Itô correction folded into one dB term: π θ du − ½π² du = (2p−1)/(2p²)·θ dB.
inline double log_increment(double theta, double p, double dw, double db) {
  return (theta / p) * dw + ((2.0 * p - 1.0) / (2.0 * p * p)) * theta * db;
}

std::size_t locate(const std::vector<double>& grid, double r) {
  auto it = std::lower_bound(grid.begin(), grid.end(), r - kTimeTolerance);
  if (it == grid.end() || std::abs(*it - r) > kTimeTolerance) {
    throw Error(ErrorCode::GridNotRefined, "image missing from the r-grid");
  }
  return static_cast<std::size_t>(it - grid.begin());
}

}  // namespace

ThetaFamily ThetaFamily::constant(double theta0) {
  ThetaFamily t;
  t.kind = Kind::constant;
  t.theta0 = theta0;
  t.sup_abs = std::abs(theta0);
  std::ostringstream os;
  os << theta0;
  t.name = os.str();
  return t;
}

ThetaFamily ThetaFamily::of_time(std::function<double(double)> f,
                                 std::optional<double> sup_abs, std::string name) {
  ThetaFamily t;
  t.kind = Kind::of_time;
  t.f = std::move(f);
  t.sup_abs = sup_abs;
  t.name = std::move(name);
  return t;
}

ThetaFamily ThetaFamily::of_gamma(std::function<double(double)> g,
                                  std::optional<double> sup_abs, std::string name) {
  ThetaFamily t;
  t.kind = Kind::of_gamma;
  t.f = std::move(g);
  t.sup_abs = sup_abs;
  t.name = std::move(name);
  return t;
}

double ThetaFamily::operator()(double r, const TimeChangePath& gamma) const {
  switch (kind) {
    case Kind::constant: return theta0;
    case Kind::of_time: return f(r);
    case Kind::of_gamma: return f(gamma.eval(r));
  }
  return 0.0;
}

MomentGate exp_moment_gate(const ThetaFamily& theta, double range_end) {
  if (!theta.sup_abs || !std::isfinite(*theta.sup_abs)) {
    return {false, std::numeric_limits<double>::infinity(), "Unbounded"};
  }
  const double sup = *theta.sup_abs;
  return {true, std::exp(range_end * sup * sup), ""};
}

void validate(const MarketSpec& spec) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(spec.x > 0.0)) fail("x must be positive");
  if (!(spec.p > 0.0)) fail("p must be positive");
  if (!std::isfinite(spec.s0)) fail("s0 must be finite");
  if (!(spec.dt > 0.0)) fail("dt must be positive");
  if (spec.theta.kind != ThetaFamily::Kind::constant && !spec.theta.f) {
    fail("theta function missing");
  }
  validate(spec.timechange);
}

MarketPaths build_market_paths(const MarketSpec& spec, std::uint64_t seed,
                               std::uint64_t path_index) {
  validate(spec);
  const TimeChangeConfig& tc = spec.timechange;
  TimeChangePath lambda = sample_timechange(tc, seed, path_index);
  if (!lambda.strictly_increasing()) {
    throw Error(ErrorCode::NotStrictlyIncreasing,
                "market requires a strictly increasing time change");
  }
  TimeChangePath gamma = generalized_inverse(lambda);
  MarketPaths mp{std::move(lambda), std::move(gamma),
                 BrownianPath(seed, path_index, rng::StreamId::brownian, tc.market_horizon),
                 {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}};

  if (spec.theta.kind == ThetaFamily::Kind::of_time && !mp.lambda.jumps().empty()) {
    const auto report = check_lambda_adapted(spec.theta.f, mp.lambda);
    if (!report.pass) {
      throw Error(ErrorCode::NotLambdaAdapted, "θ̃ = f(r) " + report.message());
    }
  }

  mp.m = time_changed_bm(mp.w, mp.lambda, make_t_grid(mp.lambda, tc.horizon, spec.dt));
  mp.r_grid = make_r_grid(mp.m, spec.dr);
  mp.w.refine(mp.r_grid);

  const std::size_t nt = mp.m.lambda.size();
  mp.r_index.resize(nt);
  mp.r_index_left.resize(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    mp.r_index[k] = locate(mp.r_grid, mp.m.lambda.value[k]);
    mp.r_index_left[k] = mp.m.lambda.left[k] == mp.m.lambda.value[k]
                             ? mp.r_index[k]
                             : locate(mp.r_grid, mp.m.lambda.left[k]);
  }

  const std::size_t nr = mp.r_grid.size();
  mp.w_r.resize(nr);
  mp.theta_r.resize(nr);
  mp.b_r.resize(nr);
  mp.q_r.resize(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    mp.w_r[i] = mp.w.at(mp.r_grid[i]);
    mp.theta_r[i] = spec.theta(mp.r_grid[i], mp.gamma);
  }
  if (spec.theta.kind == ThetaFamily::Kind::constant) {
    const double th = spec.theta.theta0;
    for (std::size_t i = 0; i < nr; ++i) {
      mp.b_r[i] = th * mp.r_grid[i];
      mp.q_r[i] = th * th * mp.r_grid[i];
    }
  } else {
    mp.b_r[0] = 0.0;
    mp.q_r[0] = 0.0;
    for (std::size_t i = 0; i + 1 < nr; ++i) {
      const double h = mp.r_grid[i + 1] - mp.r_grid[i];
      const double t0 = mp.theta_r[i];
      const double t1 = mp.theta_r[i + 1];
      mp.b_r[i + 1] = mp.b_r[i] + 0.5 * h * (t0 + t1);
      mp.q_r[i + 1] = mp.q_r[i] + 0.5 * h * (t0 * t0 + t1 * t1);
    }
  }

  mp.a.t = mp.m.lambda.t;
  mp.s.t = mp.m.lambda.t;
  mp.a.value.resize(nt);
  mp.a.left.resize(nt);
  mp.s.value.resize(nt);
  mp.s.left.resize(nt);
  mp.theta_t.resize(nt);
  mp.theta_t_left.resize(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    mp.a.value[k] = mp.b_r[mp.r_index[k]];
    mp.a.left[k] = mp.b_r[mp.r_index_left[k]];
    mp.s.value[k] = spec.s0 + mp.m.m.value[k] + mp.a.value[k];
    mp.s.left[k] = spec.s0 + mp.m.m.left[k] + mp.a.left[k];
    mp.theta_t[k] = mp.theta_r[mp.r_index[k]];
    mp.theta_t_left[k] = mp.theta_r[mp.r_index_left[k]];
  }
  return mp;
}

std::vector<double> optimal_log_exponential(const MarketSpec& spec, const MarketPaths& paths) {
  const std::size_t nr = paths.r_grid.size();
  std::vector<double> log_e(nr, 0.0);
  for (std::size_t i = 0; i + 1 < nr; ++i) {
    log_e[i + 1] = log_e[i] + log_increment(paths.theta_r[i], spec.p,
                                            paths.w_r[i + 1] - paths.w_r[i],
                                            paths.b_r[i + 1] - paths.b_r[i]);
  }
  return log_e;
}

StrategyPath optimal_strategy_tilde(const MarketSpec& spec, const MarketPaths& paths) {
  require_optimizable(spec);
  const auto log_e = optimal_log_exponential(spec, paths);
  StrategyPath out;
  out.axis = Axis::r_axis;
  out.grid = paths.r_grid;
  out.tag = "optimal_tilde";
  out.values.resize(log_e.size());
  for (std::size_t i = 0; i < log_e.size(); ++i) {
    out.values[i] = spec.x * (paths.theta_r[i] / spec.p) * std::exp(log_e[i]);
  }
  out.values_left = out.values;
  out.gain.resize(log_e.size());
  for (std::size_t i = 0; i < log_e.size(); ++i) {
    out.gain[i] = spec.x * std::exp(log_e[i]) - spec.x;
  }
  out.gain_left = out.gain;
  return out;
}

StrategyPath optimal_strategy_hat(const MarketSpec& spec, const MarketPaths& paths) {
  require_optimizable(spec);
  const GridPath& m = paths.m.m;
  const GridPath& a = paths.a;
  const std::size_t nt = m.size();
  std::vector<double> log_after(nt, 0.0);
  std::vector<double> log_left(nt, 0.0);
  double log_e = 0.0;
  for (std::size_t k = 0; k + 1 < nt; ++k) {
    log_e += log_increment(paths.theta_t[k], spec.p, m.left[k + 1] - m.value[k],
                           a.left[k + 1] - a.value[k]);
    log_left[k + 1] = log_e;
    if (paths.m.lambda.left[k + 1] != paths.m.lambda.value[k + 1]) {
      log_e += log_increment(paths.theta_t_left[k + 1], spec.p,
                             m.value[k + 1] - m.left[k + 1], a.value[k + 1] - a.left[k + 1]);
    }
    log_after[k + 1] = log_e;
  }
  StrategyPath out;
  out.axis = Axis::t_axis;
  out.grid = paths.m.lambda.t;
  out.tag = "optimal_hat";
  out.values.resize(nt);
  out.values_left.resize(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    out.values[k] = spec.x * (paths.theta_t[k] / spec.p) * std::exp(log_after[k]);
    out.values_left[k] = spec.x * (paths.theta_t_left[k] / spec.p) * std::exp(log_left[k]);
  }

  // Between jumps the gain of ν̂ is the increment of x·exp(L). Across a jump
  // the position ν̂_τ is held through ΔS_τ, which differs from the jump of
  // x·exp(L); the difference is carried forward.
  out.gain.resize(nt);
  out.gain_left.resize(nt);
  double correction = 0.0;
  for (std::size_t k = 0; k < nt; ++k) {
    const double v_left = spec.x * std::exp(log_left[k]);
    const double v_after = spec.x * std::exp(log_after[k]);
    out.gain_left[k] = v_left - spec.x + correction;
    if (paths.m.lambda.left[k] != paths.m.lambda.value[k]) {
      const double jump = (m.value[k] - m.left[k]) + (a.value[k] - a.left[k]);
      correction += out.values_left[k] * jump - (v_after - v_left);
    }
    out.gain[k] = v_after - spec.x + correction;
  }
  return out;
}

double pullback_deviation(const StrategyPath& hat, const StrategyPath& tilde,
                          const MarketPaths& paths) {
  if (hat.axis != Axis::t_axis || tilde.axis != Axis::r_axis) {
    throw Error(ErrorCode::AxisMismatch, "pullback compares a t-axis and an r-axis strategy");
  }
  double dev = 0.0;
  for (std::size_t k = 0; k < hat.values.size(); ++k) {
    dev = std::max(dev, std::abs(hat.values[k] - tilde.values[paths.r_index[k]]));
    dev = std::max(dev, std::abs(hat.values_left[k] - tilde.values[paths.r_index_left[k]]));
  }
  return dev;
}

StrategyPath scaled(StrategyPath strategy, double factor) {
  for (double& v : strategy.values) v *= factor;
  for (double& v : strategy.values_left) v *= factor;
  for (double& v : strategy.gain) v *= factor;
  for (double& v : strategy.gain_left) v *= factor;
  std::ostringstream os;
  os << "perturbed(" << factor << ")";
  strategy.tag = os.str();
  return strategy;
}

StrategyPath constant_amount(const MarketPaths& paths, double units) {
  StrategyPath out;
  out.axis = Axis::t_axis;
  out.grid = paths.m.lambda.t;
  out.values.assign(out.grid.size(), units);
  out.values_left = out.values;
  out.gain.resize(out.grid.size());
  out.gain_left.resize(out.grid.size());
  for (std::size_t k = 0; k < out.grid.size(); ++k) {
    out.gain[k] = units * (paths.s.value[k] - paths.s.value[0]);
    out.gain_left[k] = units * (paths.s.left[k] - paths.s.value[0]);
  }
  std::ostringstream os;
  os << "constant_amount(" << units << ")";
  out.tag = os.str();
  return out;
}

StrategyPath buy_and_hold(const MarketSpec& spec, const MarketPaths& paths, double fraction) {
  StrategyPath out = constant_amount(paths, fraction * spec.x / spec.s0);
  std::ostringstream os;
  os << "buy_and_hold(" << fraction << ")";
  out.tag = os.str();
  return out;
}

WealthPath wealth_process(double x, const StrategyPath& strategy, const MarketPaths& paths,
                          Axis driver) {
  if (strategy.axis != driver) {
    throw Error(ErrorCode::AxisMismatch, "strategy axis does not match the driver");
  }
  WealthPath out;
  if (driver == Axis::r_axis) {
    const std::size_t nr = paths.r_grid.size();
    if (strategy.values.size() != nr) {
      throw Error(ErrorCode::AxisMismatch, "strategy is not on the market r-grid");
    }
    out.values.resize(nr);
    out.values[0] = x;
    for (std::size_t i = 0; i + 1 < nr; ++i) {
      const double dx = (paths.w_r[i + 1] - paths.w_r[i]) + (paths.b_r[i + 1] - paths.b_r[i]);
      out.values[i + 1] = out.values[i] + strategy.values[i] * dx;
    }
    out.values_left = out.values;
  } else {
    const GridPath& m = paths.m.m;
    const GridPath& a = paths.a;
    const std::size_t nt = m.size();
    if (strategy.values.size() != nt || strategy.values_left.size() != nt) {
      throw Error(ErrorCode::AxisMismatch, "strategy is not on the market t-grid");
    }
    out.values.resize(nt);
    out.values_left.resize(nt);
    out.values[0] = out.values_left[0] = x;
    for (std::size_t k = 0; k + 1 < nt; ++k) {
      const double ds = (m.left[k + 1] - m.value[k]) + (a.left[k + 1] - a.value[k]);
      double v = out.values[k] + strategy.values[k] * ds;
      out.values_left[k + 1] = v;
      if (paths.m.lambda.left[k + 1] != paths.m.lambda.value[k + 1]) {
        const double jump = (m.value[k + 1] - m.left[k + 1]) + (a.value[k + 1] - a.left[k + 1]);
        v += strategy.values_left[k + 1] * jump;
      }
      out.values[k + 1] = v;
    }
  }
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (!(out.values[i] >= 0.0) || !(out.values_left[i] >= 0.0)) {
      out.admissible = false;
      break;
    }
  }
  return out;
}

WealthPath strategy_wealth(double x, const StrategyPath& strategy, const MarketPaths& paths) {
  if (strategy.gain.empty()) return wealth_process(x, strategy, paths, strategy.axis);
  WealthPath out;
  out.values.resize(strategy.gain.size());
  out.values_left.resize(strategy.gain.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = x + strategy.gain[i];
    out.values_left[i] = x + strategy.gain_left[i];
    if (!(out.values[i] >= 0.0) || !(out.values_left[i] >= 0.0)) out.admissible = false;
  }
  return out;
}

double utility(double v, double p) {
  if (p == 1.0) return std::log(v);
  return std::pow(v, 1.0 - p) / (1.0 - p);
}

double value_closed_form_power(const MarketSpec& spec, const MarketPaths& paths, double t) {
  if (spec.p == 1.0) throw Error(ErrorCode::PEqualsOne, "use the logarithmic value for p = 1");
  const std::size_t k = locate(paths.m.lambda.t, t);
  const double q = paths.q_r.back() - paths.q_r[paths.r_index[k]];
  const double p = spec.p;
  return std::pow(spec.x, 1.0 - p) / (1.0 - p) * std::exp((1.0 - p) / (2.0 * p) * q);
}

double value_closed_form_log(const MarketSpec& spec, const MarketPaths& paths, double t) {
  if (spec.p != 1.0) throw Error(ErrorCode::PNotOne, "the logarithmic value needs p = 1");
  const std::size_t k = locate(paths.m.lambda.t, t);
  const std::size_t end = paths.r_index[k];
  double stochastic = 0.0;
  for (std::size_t i = 0; i < end; ++i) {
    stochastic += paths.theta_r[i] * (paths.w_r[i + 1] - paths.w_r[i]);
  }
  return std::log(spec.x) + stochastic + 0.5 * paths.q_r.back();
}

double value_closed_form(const MarketSpec& spec, const MarketPaths& paths, double t) {
  return spec.p == 1.0 ? value_closed_form_log(spec, paths, t)
                       : value_closed_form_power(spec, paths, t);
}

NamedStrategy zero_strategy() {
  return {"zero", [](const MarketSpec&, const MarketPaths& mp) { return constant_amount(mp, 0.0); }};
}

NamedStrategy optimal_hat_strategy() {
  return {"optimal_hat", [](const MarketSpec& s, const MarketPaths& mp) {
            return optimal_strategy_hat(s, mp);
          }};
}

NamedStrategy optimal_tilde_strategy() {
  return {"optimal_tilde", [](const MarketSpec& s, const MarketPaths& mp) {
            return optimal_strategy_tilde(s, mp);
          }};
}

std::vector<NamedStrategy> perturbation_battery() {
  std::vector<NamedStrategy> out;
  for (double f : {0.5, 1.5}) {
    std::ostringstream os;
    os << "perturbed(" << f << ")";
    out.push_back({os.str(),
                   [f](const MarketSpec& s, const MarketPaths& mp) {
                     return scaled(optimal_strategy_hat(s, mp), f);
                   },
                   false});
  }
  out.push_back({"constant_amount(0.25x)", [](const MarketSpec& s, const MarketPaths& mp) {
                   return constant_amount(mp, 0.25 * s.x);
                 },
                 false});
  out.push_back({"buy_and_hold(0.5)", [](const MarketSpec& s, const MarketPaths& mp) {
                   return buy_and_hold(s, mp, 0.5);
                 },
                 false});
  return out;
}

MarketStudy run_market_study(const MarketSpec& spec,
                             const std::vector<NamedStrategy>& strategies,
                             std::size_t n_paths, std::uint64_t seed,
                             const RunOptions& options) {
  validate(spec);
  const std::size_t ns = strategies.size();
  constexpr double kRejected = std::numeric_limits<double>::quiet_NaN();
  // Row i: closed-form value, then U(V_T) per strategy (NaN when rejected).
  const auto rows = parallel_map<std::vector<double>>(
      n_paths,
      [&](std::size_t i) {
        const MarketPaths mp = build_market_paths(spec, seed, i);
        std::vector<double> row(ns + 1);
        row[0] = value_closed_form(spec, mp, 0.0);
        for (std::size_t j = 0; j < ns; ++j) {
          const StrategyPath strategy = strategies[j].make(spec, mp);
          const WealthPath v = strategy_wealth(spec.x, strategy, mp);
          if (!v.admissible) {
            // Competitors stop trading at ruin; their wealth stays at zero.
            row[j + 1] = strategies[j].require_admissible ? kRejected : utility(0.0, spec.p);
            continue;
          }
          const double u = utility(v.terminal(), spec.p);
          row[j + 1] = std::isfinite(u) || !strategies[j].require_admissible ? u : kRejected;
        }
        return row;
      },
      options);

  MarketStudy study;
  study.n_paths = n_paths;
  std::vector<double> column;
  column.reserve(n_paths);
  for (const auto& row : rows) column.push_back(row[0]);
  study.closed_form = summarize(column, seed, spec.dt);

  auto summarize_or_ruin = [&](const std::vector<double>& x) {
    Estimate e = summarize(x, seed, spec.dt);
    if (std::any_of(x.begin(), x.end(), [](double v) { return std::isinf(v) && v < 0; })) {
      e.mean = -std::numeric_limits<double>::infinity();
      e.std_error = 0.0;
    }
    return e;
  };
  for (std::size_t j = 0; j < ns; ++j) {
    StrategyEstimate est;
    est.tag = strategies[j].tag;
    std::vector<double> values;
    std::vector<double> diffs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& row = rows[i];
      const double u = row[j + 1];
      if (std::isnan(u)) {
        ++est.rejected;
        continue;
      }
      values.push_back(u);
      if (!std::isnan(row[1])) diffs.push_back(u - row[1]);
    }
    if (strategies[j].require_admissible &&
        static_cast<double>(est.rejected) > 0.001 * static_cast<double>(n_paths)) {
      throw Error(ErrorCode::TooManyInadmissible,
                  est.tag + ": " + std::to_string(est.rejected) + " of " +
                      std::to_string(n_paths) + " paths rejected");
    }
    if (!strategies[j].require_admissible) {
      est.ruined = static_cast<std::size_t>(
          std::count_if(rows.begin(), rows.end(), [&](const std::vector<double>& row) {
            return row[j + 1] == utility(0.0, spec.p);
          }));
    }
    est.value = summarize_or_ruin(values);
    est.diff_vs_first = summarize_or_ruin(diffs);
    study.strategies.push_back(std::move(est));
  }
  return study;
}

StrategyEstimate evaluate_strategy_mc(const MarketSpec& spec, const NamedStrategy& strategy,
                                      std::size_t n_paths, std::uint64_t seed,
                                      const RunOptions& options) {
  return run_market_study(spec, {strategy}, n_paths, seed, options).strategies.front();
}

}  // namespace tcbm
