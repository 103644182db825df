#include "tcbm/stochint.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "tcbm/error.hpp"
#include "tcbm/montecarlo.hpp"

namespace tcbm {

namespace {

std::size_t node_index(std::span<const double> grid, double t) {
  auto it = std::lower_bound(grid.begin(), grid.end(), t - kTimeTolerance);
  if (it == grid.end() || std::abs(*it - t) > kTimeTolerance) {
    std::ostringstream os;
    os << std::setprecision(17) << "t = " << t << " is not a grid node";
    throw Error(ErrorCode::GridNotRefined, os.str());
  }
  return static_cast<std::size_t>(it - grid.begin());
}

void require_jumps_on_grid(const TimeChangePath& lambda, const TimeChangedPath& m,
                           double t) {
  const auto grid = m.t();
  for (const Jump& j : lambda.jumps()) {
    if (j.time > t + kTimeTolerance) break;
    auto it = std::lower_bound(grid.begin(), grid.end(), j.time - kTimeTolerance);
    if (it == grid.end() || std::abs(*it - j.time) > kTimeTolerance) {
      std::ostringstream os;
      os << std::setprecision(17) << "jump at " << j.time << " missing from the grid";
      throw Error(ErrorCode::GridMissingJump, os.str());
    }
  }
}

struct Grids {
  TimeChangePath gamma;
  TimeChangedPath m;
  std::vector<double> r_grid;
};

Grids build_grids(const TimeChangePath& lambda, BrownianPath& w, double t, double dt,
                  const VerifyOptions& options) {
  Grids g{generalized_inverse(lambda), {}, {}};
  g.m = time_changed_bm(w, lambda, make_t_grid(lambda, t, dt));
  const double dr = options.dr == 0.0 ? dt : options.dr;
  g.r_grid = make_r_grid(g.m, dr);
  w.refine(g.r_grid);
  return g;
}

IntegralPair make_pair(double lhs, double rhs, double dt, std::uint64_t seed) {
  return {lhs, rhs, std::abs(lhs - rhs), dt, seed};
}

}  // namespace

double IntegrandSpec::operator()(const PathView& view) const {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, family::Constant>) {
          return f.c;
        } else if constexpr (std::is_same_v<T, family::FunctionOfTime>) {
          return f.f(view.s);
        } else if constexpr (std::is_same_v<T, family::FunctionOfLeftLimitM>) {
          return f.g(view.m_left);
        } else if constexpr (std::is_same_v<T, family::FunctionOfLeftLimitLambda>) {
          return f.h(view.lambda_left);
        } else {
          return f.fn(view);
        }
      },
      family);
}

bool IntegrandSpec::reads_m() const {
  return std::holds_alternative<family::FunctionOfLeftLimitM>(family) ||
         std::holds_alternative<family::GeneralCallback>(family);
}

IntegrandSpec IntegrandSpec::constant(double c) {
  std::ostringstream os;
  os << c;
  return {family::Constant{c}, os.str(), std::nullopt};
}

IntegrandSpec IntegrandSpec::of_time(std::function<double(double)> f, std::string name) {
  return {family::FunctionOfTime{std::move(f)}, std::move(name), std::nullopt};
}

IntegrandSpec IntegrandSpec::of_left_m(std::function<double(double)> g, std::string name) {
  return {family::FunctionOfLeftLimitM{std::move(g)}, std::move(name), std::nullopt};
}

IntegrandSpec IntegrandSpec::of_left_lambda(std::function<double(double)> h,
                                            std::string name) {
  return {family::FunctionOfLeftLimitLambda{std::move(h)}, std::move(name), std::nullopt};
}

IntegrandSpec IntegrandSpec::callback(std::function<double(const PathView&)> fn,
                                      std::string name) {
  return {family::GeneralCallback{std::move(fn)}, std::move(name), std::nullopt};
}

RProcess constant_process(double c) {
  return [c](double) { return c; };
}

RProcess process_of_gamma(const TimeChangePath& gamma, std::function<double(double)> g) {
  return [gamma, g = std::move(g)](double r) { return g(gamma.eval(r)); };
}

RProcess process_of_r(std::function<double(double)> f) { return f; }

RProcess brownian_process(const BrownianPath& w) {
  return [&w](double r) { return w.at(r); };
}

double left_point_sum(std::span<const double> after, std::span<const double> at_jump,
                      std::span<const double> x, std::span<const double> x_left) {
  const std::size_t n = x.size();
  if (after.size() < n || at_jump.size() < n || x_left.size() < n) {
    throw Error(ErrorCode::InvalidPath, "left_point_sum: size mismatch");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    sum += after[k] * (x_left[k + 1] - x[k]);
    if (x[k + 1] != x_left[k + 1]) sum += at_jump[k + 1] * (x[k + 1] - x_left[k + 1]);
  }
  return sum;
}

std::vector<double> make_r_grid(const TimeChangedPath& m, double dr) {
  std::vector<double> images;
  images.reserve(2 * m.lambda.size());
  auto push = [&](double r) {
    if (images.empty() || r > images.back() + kTimeTolerance) images.push_back(r);
  };
  for (std::size_t k = 0; k < m.lambda.size(); ++k) {
    if (m.lambda.left[k] != m.lambda.value[k]) push(m.lambda.left[k]);
    push(m.lambda.value[k]);
  }
  if (!(dr > 0.0) || images.empty()) return images;

  const double r_end = images.back();
  std::vector<double> grid;
  grid.reserve(images.size() + static_cast<std::size_t>(r_end / dr) + 1);
  std::size_t i = 0;
  for (std::size_t k = 0;; ++k) {
    const double r = static_cast<double>(k) * dr;
    if (r > r_end + kTimeTolerance) break;
    while (i < images.size() && images[i] <= r + kTimeTolerance) grid.push_back(images[i++]);
    if (std::abs(grid.back() - r) > kTimeTolerance &&
        (i == images.size() || images[i] - r > kTimeTolerance)) {
      grid.push_back(r);
    }
  }
  for (; i < images.size(); ++i) grid.push_back(images[i]);
  return grid;
}

double ito_integral_dW(const RProcess& f, const BrownianPath& w,
                       std::span<const double> r_grid) {
  if (r_grid.size() < 2) return 0.0;
  double sum = 0.0;
  double w_prev = w.at(r_grid[0]);
  for (std::size_t i = 0; i + 1 < r_grid.size(); ++i) {
    const double w_next = w.at(r_grid[i + 1]);
    sum += f(r_grid[i]) * (w_next - w_prev);
    w_prev = w_next;
  }
  return sum;
}

double ito_integral_dW(const RProcess& f, const BrownianPath& w, double a, double b) {
  if (b < a) throw Error(ErrorCode::OutOfDomain, "ito_integral_dW: b < a");
  const auto times = w.times();
  const std::size_t ia = node_index(times, a);
  const std::size_t ib = node_index(times, b);
  return ito_integral_dW(f, w, times.subspan(ia, ib - ia + 1));
}

std::vector<double> integrand_on_grid(const IntegrandSpec& nu, const TimeChangedPath& m) {
  std::vector<double> out(m.lambda.size());
  const std::span<const double> t = m.lambda.t;
  const std::span<const double> lv = m.lambda.value;
  const std::span<const double> mv = m.m.value;
  for (std::size_t k = 0; k < out.size(); ++k) {
    PathView view{t[k], m.lambda.left[k], m.m.left[k], t.first(k), lv.first(k), mv.first(k)};
    out[k] = nu(view);
  }
  return out;
}

double ito_integral_dM(const IntegrandSpec& nu, const TimeChangePath& lambda,
                       const TimeChangedPath& m, double t) {
  const std::size_t last = node_index(m.t(), t);
  require_jumps_on_grid(lambda, m, t);
  const auto values = integrand_on_grid(nu, m);
  const std::size_t n = last + 1;
  return left_point_sum(std::span(values).first(n), std::span(values).first(n),
                        std::span(m.m.value).first(n), std::span(m.m.left).first(n));
}

double stieltjes_integral(std::span<const double> nu, const GridPath& a, double t) {
  const std::size_t n = node_index(a.t, t) + 1;
  if (nu.size() < n) throw Error(ErrorCode::InvalidPath, "integrand shorter than grid");
  return left_point_sum(nu.first(n), nu.first(n), std::span(a.value).first(n),
                        std::span(a.left).first(n));
}

double stieltjes_integral(const IntegrandSpec& nu, const TimeChangedPath& m,
                          const GridPath& a, double t) {
  if (a.t != m.lambda.t) throw Error(ErrorCode::InvalidPath, "A and M grids differ");
  return stieltjes_integral(integrand_on_grid(nu, m), a, t);
}

double evaluate_at(const IntegrandSpec& nu, double s, const TimeChangePath& lambda,
                   const BrownianPath& w, const TimeChangedPath& m) {
  const std::span<const double> t = m.lambda.t;
  const auto k = static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), s) - t.begin());
  PathView view;
  view.s = s;
  view.lambda_left = lambda.left_limit(s);
  view.m_left = nu.reads_m() ? w.at(view.lambda_left) : 0.0;
  view.times = t.first(k);
  view.lambda = std::span<const double>(m.lambda.value).first(k);
  view.m = std::span<const double>(m.m.value).first(k);
  return nu(view);
}

RProcess compose_with_inverse(const IntegrandSpec& nu, const TimeChangePath& lambda,
                              const TimeChangePath& gamma, const BrownianPath& w,
                              const TimeChangedPath& m) {
  if (!(gamma == generalized_inverse(lambda))) {
    throw Error(ErrorCode::InverseMismatch, "Γ is not the generalized inverse of Λ");
  }
  return [&nu, &lambda, &gamma, &w, &m](double r) {
    return evaluate_at(nu, gamma.eval(r), lambda, w, m);
  };
}

std::string LambdaAdaptedReport::message() const {
  if (pass) return "Λ-adapted";
  std::ostringstream os;
  os << std::setprecision(17) << "not constant on [" << interval_left << ", "
     << interval_right << "] (jump " << jump_index + 1 << " at τ = " << jump_time
     << "), deviation " << deviation;
  return os.str();
}

std::vector<double> adaptedness_probes(const TimeChangePath& lambda, int probes) {
  std::vector<double> out;
  const int count = std::max(probes, 2);
  for (const Jump& j : lambda.jumps()) {
    for (int p = 0; p < count; ++p) {
      out.push_back(p + 1 == count ? j.right
                                   : j.left + (j.right - j.left) * p / (count - 1));
    }
  }
  return out;
}

LambdaAdaptedReport check_lambda_adapted(const RProcess& nu_tilde,
                                         const TimeChangePath& lambda, double tol,
                                         int probes) {
  LambdaAdaptedReport report;
  const int count = std::max(probes, 2);
  const auto jumps = lambda.jumps();
  for (std::size_t i = 0; i < jumps.size(); ++i) {
    const Jump& j = jumps[i];
    const double reference = nu_tilde(j.left);
    double deviation = 0.0;
    for (int p = 1; p < count; ++p) {
      const double r = p + 1 == count ? j.right
                                      : j.left + (j.right - j.left) * p / (count - 1);
      const double d = std::abs(nu_tilde(r) - reference);
      deviation = std::isnan(d) ? d : std::max(deviation, d);
      if (std::isnan(deviation)) break;
    }
    if (!(deviation <= tol)) {
      report = {false, i, j.time, j.left, j.right, deviation};
      return report;
    }
  }
  return report;
}

IntegralPair verify_forward(const IntegrandSpec& nu, const TimeChangePath& lambda,
                            BrownianPath& w, double t, double dt,
                            const VerifyOptions& options) {
  const Grids g = build_grids(lambda, w, t, dt, options);
  const double lhs = ito_integral_dM(nu, lambda, g.m, t);
  const double rhs =
      ito_integral_dW(compose_with_inverse(nu, lambda, g.gamma, w, g.m), w, g.r_grid);
  return make_pair(lhs, rhs, dt, options.seed);
}

IntegralPair verify_backward(const RProcess& nu_tilde, const TimeChangePath& lambda,
                             BrownianPath& w, double t, double dt,
                             const VerifyOptions& options) {
  const Grids g = build_grids(lambda, w, t, dt, options);
  if (options.enforce_adapted) {
    w.refine(adaptedness_probes(lambda));
    const auto report = check_lambda_adapted(nu_tilde, lambda, options.adapted_tol);
    if (!report.pass) throw Error(ErrorCode::NotLambdaAdapted, "ν̃ " + report.message());
  }
  const double lhs = ito_integral_dW(nu_tilde, w, g.r_grid);

  const GridPath& lam = g.m.lambda;
  std::vector<double> after(lam.size());
  std::vector<double> at_jump(lam.size());
  for (std::size_t k = 0; k < lam.size(); ++k) {
    after[k] = nu_tilde(lam.value[k]);
    at_jump[k] = lam.left[k] == lam.value[k] ? after[k] : nu_tilde(lam.left[k]);
  }
  const double rhs = left_point_sum(after, at_jump, g.m.m.value, g.m.m.left);
  return make_pair(lhs, rhs, dt, options.seed);
}

AdaptedIntegrator identity_integrator() {
  return {"r", [](double r) { return r; }, {}};
}

AdaptedIntegrator gamma_integrator(const TimeChangePath& gamma,
                                   std::function<double(double)> g) {
  return {"g(Γ_r)", [gamma, g = std::move(g)](double r) { return g(gamma.eval(r)); }, {}};
}

AdaptedIntegrator flattened_brownian(const TimeChangePath& lambda, std::uint64_t seed,
                                     std::uint64_t path_index) {
  std::vector<Jump> jumps(lambda.jumps().begin(), lambda.jumps().end());
  // Constant (exactly) on each jump image, slope one elsewhere.
  auto clock = [jumps](double r) {
    double removed = 0.0;
    for (const Jump& j : jumps) {
      if (r < j.left) break;
      if (r <= j.right) return j.left - removed;
      removed += j.right - j.left;
    }
    return r - removed;
  };
  auto b = std::make_shared<BrownianPath>(seed, path_index, rng::StreamId::auxiliary);
  AdaptedIntegrator s;
  s.name = "flattened_brownian";
  s.value = [b, clock](double r) { return b->at(clock(r)); };
  s.prepare = [b, clock](std::span<const double> rs) {
    std::vector<double> c(rs.size());
    std::transform(rs.begin(), rs.end(), c.begin(), clock);
    b->refine(c);
  };
  return s;
}

namespace {

struct JacodSetup {
  Grids g;
  std::vector<double> x;
  std::vector<double> x_left;
  std::vector<double> s_r;
};

JacodSetup jacod_setup(const TimeChangePath& lambda, BrownianPath& w,
                       const AdaptedIntegrator& s, double t, double dt,
                       const VerifyOptions& options) {
  JacodSetup js{build_grids(lambda, w, t, dt, options), {}, {}, {}};
  if (s.prepare) {
    s.prepare(js.g.r_grid);
    if (options.enforce_adapted) s.prepare(adaptedness_probes(lambda));
  }
  if (options.enforce_adapted) {
    const auto report = check_lambda_adapted(s.value, lambda, options.adapted_tol);
    if (!report.pass) throw Error(ErrorCode::NotLambdaAdapted, "S " + report.message());
  }
  const GridPath& lam = js.g.m.lambda;
  js.x.resize(lam.size());
  js.x_left.resize(lam.size());
  for (std::size_t k = 0; k < lam.size(); ++k) {
    js.x[k] = s.value(lam.value[k]);
    js.x_left[k] = lam.left[k] == lam.value[k] ? js.x[k] : s.value(lam.left[k]);
  }
  js.s_r.resize(js.g.r_grid.size());
  std::transform(js.g.r_grid.begin(), js.g.r_grid.end(), js.s_r.begin(), s.value);
  return js;
}

double r_axis_sum(const std::vector<double>& integrand, const std::vector<double>& s_r) {
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < s_r.size(); ++i) {
    sum += integrand[i] * (s_r[i + 1] - s_r[i]);
  }
  return sum;
}

}  // namespace

IntegralPair verify_jacod_i(const IntegrandSpec& nu, const TimeChangePath& lambda,
                            BrownianPath& w, const AdaptedIntegrator& s, double t,
                            double dt, const VerifyOptions& options) {
  const JacodSetup js = jacod_setup(lambda, w, s, t, dt, options);
  const auto values = integrand_on_grid(nu, js.g.m);
  const double lhs = left_point_sum(values, values, js.x, js.x_left);

  std::vector<double> composed(js.g.r_grid.size());
  for (std::size_t i = 0; i < composed.size(); ++i) {
    composed[i] = evaluate_at(nu, js.g.gamma.left_limit(js.g.r_grid[i]), lambda, w, js.g.m);
  }
  return make_pair(lhs, r_axis_sum(composed, js.s_r), dt, options.seed);
}

IntegralPair verify_jacod_ii(const RProcess& nu_tilde, const TimeChangePath& lambda,
                             BrownianPath& w, const AdaptedIntegrator& s, double t,
                             double dt, const VerifyOptions& options) {
  const JacodSetup js = jacod_setup(lambda, w, s, t, dt, options);
  std::vector<double> on_r(js.g.r_grid.size());
  std::transform(js.g.r_grid.begin(), js.g.r_grid.end(), on_r.begin(), nu_tilde);
  const double lhs = r_axis_sum(on_r, js.s_r);

  const GridPath& lam = js.g.m.lambda;
  std::vector<double> values(lam.size());
  for (std::size_t k = 0; k < lam.size(); ++k) values[k] = nu_tilde(lam.left[k]);
  const double rhs = left_point_sum(values, values, js.x, js.x_left);
  return make_pair(lhs, rhs, dt, options.seed);
}

SquareIntegrabilityReport square_integrability_gate(const IntegrandSpec& nu,
                                                    const TimeChangeConfig& config,
                                                    std::span<const double> dts,
                                                    std::size_t n_paths,
                                                    std::uint64_t seed,
                                                    double growth_tol) {
  SquareIntegrabilityReport report;
  for (double dt : dts) {
    const Estimate e = run_estimate(
        [&](std::uint64_t master, std::uint64_t path) {
          const TimeChangePath lambda = sample_timechange(config, master, path);
          BrownianPath w(master, path, rng::StreamId::brownian, config.market_horizon);
          const TimeChangedPath m =
              time_changed_bm(w, lambda, make_t_grid(lambda, config.horizon, dt));
          auto v = integrand_on_grid(nu, m);
          for (double& x : v) x *= x;
          return left_point_sum(v, v, m.lambda.value, m.lambda.left);
        },
        n_paths, seed, dt, RunOptions{true, 1});
    report.dts.push_back(dt);
    report.estimates.push_back(e.mean);
    report.std_errors.push_back(e.std_error);
  }

  report.pass = true;
  const auto& est = report.estimates;
  const auto& se = report.std_errors;
  for (double x : est) {
    if (!std::isfinite(x)) {
      report.pass = false;
      report.reason = "non-finite estimate";
      return report;
    }
  }
  if (est.size() >= 2) {
    const std::size_t a = est.size() - 2;
    const std::size_t b = est.size() - 1;
    const double growth = est[b] - est[a];
    const double noise = 3.0 * std::hypot(se[a], se[b]);
    if (growth > std::max(growth_tol * std::abs(est[a]), noise)) {
      report.pass = false;
      report.reason = "estimate grows under refinement";
      return report;
    }
  }
  if (nu.square_integrability_bound && !est.empty() &&
      est.back() > *nu.square_integrability_bound + 3.0 * se.back()) {
    report.pass = false;
    report.reason = "estimate exceeds the declared bound";
  }
  return report;
}

}  // namespace tcbm
