#include "tcbm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <toml.hpp>

#include "tcbm/error.hpp"
#include "tcbm/noise.hpp"
#include "tcbm/stochint.hpp"

#ifndef TCBM_VERSION
#define TCBM_VERSION "unknown"
#endif

namespace tcbm {

namespace {

using json = nlohmann::json;

[[noreturn]] void config_error(const std::string& msg) {
  throw Error(ErrorCode::ConfigError, msg);
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

/// JSON has no infinities; those are written as strings.
json num(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

// Typed access to one TOML table with field-level error messages.
class Section {
 public:
  Section(const toml::table* table, std::string prefix)
      : table_(table), prefix_(std::move(prefix)) {}

  bool has(std::string_view key) const { return table_ && table_->contains(key); }

  std::string field(std::string_view key) const {
    return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key);
  }

  std::optional<double> opt_number(std::string_view key) const {
    const toml::node* n = node(key);
    if (!n) return std::nullopt;
    if (auto v = n->as_floating_point()) return v->get();
    if (auto v = n->as_integer()) return static_cast<double>(v->get());
    config_error("field '" + field(key) + "': expected a number");
  }
  double number(std::string_view key, double fallback) const {
    return opt_number(key).value_or(fallback);
  }

  std::optional<std::int64_t> opt_integer(std::string_view key) const {
    const toml::node* n = node(key);
    if (!n) return std::nullopt;
    if (auto v = n->as_integer()) return v->get();
    config_error("field '" + field(key) + "': expected an integer");
  }
  std::size_t count(std::string_view key, std::size_t fallback) const {
    const auto v = opt_integer(key);
    if (!v) return fallback;
    if (*v < 0) {
      config_error("field '" + field(key) + "': must be >= 0 (got " + std::to_string(*v) + ")");
    }
    return static_cast<std::size_t>(*v);
  }

  bool boolean(std::string_view key, bool fallback) const {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (auto v = n->as_boolean()) return v->get();
    config_error("field '" + field(key) + "': expected true or false");
  }

  std::string string(std::string_view key, std::string fallback) const {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (auto v = n->as_string()) return v->get();
    config_error("field '" + field(key) + "': expected a string");
  }

  std::string choice(std::string_view key, std::string fallback,
                     std::initializer_list<std::string_view> allowed) const {
    std::string v = string(key, std::move(fallback));
    for (auto a : allowed) {
      if (v == a) return v;
    }
    std::string list;
    for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    config_error("field '" + field(key) + "': unknown value '" + v + "' (expected one of " +
                 list + ")");
  }

  std::optional<std::vector<double>> numbers(std::string_view key) const {
    const toml::node* n = node(key);
    if (!n) return std::nullopt;
    const toml::array* arr = n->as_array();
    if (!arr) config_error("field '" + field(key) + "': expected an array of numbers");
    std::vector<double> out;
    for (const toml::node& e : *arr) {
      if (auto v = e.as_floating_point()) {
        out.push_back(v->get());
      } else if (auto i = e.as_integer()) {
        out.push_back(static_cast<double>(i->get()));
      } else {
        config_error("field '" + field(key) + "': expected an array of numbers");
      }
    }
    return out;
  }

  Section sub(std::string_view key) const {
    const toml::node* n = node(key);
    if (n && !n->is_table()) config_error("field '" + field(key) + "': expected a table");
    return Section(n ? n->as_table() : nullptr, field(key));
  }

  void check_keys(std::initializer_list<std::string_view> allowed) const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      const std::string_view key = k.str();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        config_error("unknown field '" + field(key) + "'");
      }
    }
  }

 private:
  const toml::node* node(std::string_view key) const {
    return table_ ? table_->get(key) : nullptr;
  }

  const toml::table* table_;
  std::string prefix_;
};

void require(bool ok, const std::string& field, const std::string& what, double got) {
  if (!ok) config_error("field '" + field + "': " + what + " (got " + fmt(got) + ")");
}

FunctionSpec parse_function(const Section& s) {
  FunctionSpec f;
  f.base = s.choice("function", "identity",
                    {"identity", "square", "sin", "cos", "exp", "tanh", "reciprocal_gap"});
  f.scale = s.number("scale", 1.0);
  f.shift = s.number("shift", 0.0);
  f.frequency = s.number("frequency", 1.0);
  f.pole = s.number("pole", 1.0);
  return f;
}

TimeChangeConfig parse_timechange(const Section& s) {
  s.check_keys({"kind", "horizon", "market_horizon", "drift", "jump_count", "jumps",
                "jump_rate", "max_jumps", "jump_size", "jump_mean", "jump_low", "jump_high",
                "min_separation", "eps_min", "jump_times", "jump_sizes"});
  TimeChangeConfig c;
  const std::string kind = s.choice("kind", "drift_plus_jumps", {"drift_plus_jumps", "deterministic"});
  c.kind = kind == "deterministic" ? TimeChangeKind::deterministic
                                   : TimeChangeKind::drift_plus_jumps;
  c.horizon = s.number("horizon", 1.0);
  require(c.horizon > 0.0, s.field("horizon"), "must be positive", c.horizon);
  c.market_horizon = s.number("market_horizon", 8.0);
  require(c.market_horizon > 0.0, s.field("market_horizon"), "must be positive",
          c.market_horizon);
  c.drift_slope = s.number("drift", 1.0);
  require(c.drift_slope >= 0.0, s.field("drift"), "must be >= 0", c.drift_slope);
  c.eps_min = s.number("eps_min", kDefaultEpsMin);
  require(c.eps_min > 0.0, s.field("eps_min"), "must be positive", c.eps_min);
  c.min_separation = s.number("min_separation", 0.0);
  require(c.min_separation >= 0.0, s.field("min_separation"), "must be >= 0",
          c.min_separation);

  JumpLaw& law = c.jumps;
  law.count = s.choice("jump_count", "fixed", {"fixed", "poisson"}) == "poisson"
                  ? JumpCountLaw::poisson
                  : JumpCountLaw::fixed;
  law.fixed_count = s.count("jumps", 0);
  law.poisson_rate = s.number("jump_rate", 0.0);
  require(law.poisson_rate >= 0.0, s.field("jump_rate"), "must be >= 0", law.poisson_rate);
  law.max_count = s.count("max_jumps", kDefaultMaxJumps);
  law.size = s.choice("jump_size", "exponential", {"exponential", "uniform"}) == "uniform"
                 ? JumpSizeLaw::uniform
                 : JumpSizeLaw::exponential;
  law.size_mean = s.number("jump_mean", 0.25);
  law.size_low = s.number("jump_low", 0.0);
  law.size_high = s.number("jump_high", 0.0);

  const auto times = s.numbers("jump_times").value_or(std::vector<double>{});
  const auto sizes = s.numbers("jump_sizes").value_or(std::vector<double>{});
  if (times.size() != sizes.size()) {
    config_error("fields '" + s.field("jump_times") + "' and '" + s.field("jump_sizes") +
                 "' must have the same length");
  }
  if (!times.empty() && c.kind != TimeChangeKind::deterministic) {
    config_error("field '" + s.field("jump_times") + "': only used with kind = \"deterministic\"");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    c.deterministic_jumps.push_back({times[i], sizes[i]});
  }
  try {
    validate(c);
    if (c.kind == TimeChangeKind::deterministic) (void)sample_timechange(c, 0, 0);
  } catch (const Error& e) {
    config_error(std::string("section 'timechange': ") + e.what());
  }
  return c;
}

ThetaFamily parse_theta(const Section& s) {
  const std::string kind = s.choice("theta", "constant", {"constant", "time", "gamma"});
  const double theta0 = s.number("theta0", 1.0);
  const auto sup = s.opt_number("theta_sup");
  if (sup) require(*sup >= 0.0, s.field("theta_sup"), "must be >= 0", *sup);
  const FunctionSpec f = parse_function(s);
  ThetaFamily theta;
  if (kind == "constant") {
    theta = ThetaFamily::constant(theta0);
  } else if (kind == "time") {
    theta = ThetaFamily::of_time(f.make(), sup, f.label("r"));
  } else {
    theta = ThetaFamily::of_gamma(f.make(), sup, f.label("Gamma_r"));
  }
  theta.h0_measurable = s.boolean("h0_measurable", true);
  return theta;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorCode::NumericalFailure, "cannot write " + file.string());
  out << text;
  if (!out) throw Error(ErrorCode::NumericalFailure, "write failed for " + file.string());
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct Artifacts {
  std::ostringstream csv;
  json summary = json::object();
  ExperimentOutcome outcome{true, {}};

  void band(bool ok, const std::string& what) {
    if (!ok) {
      outcome.pass = false;
      outcome.failures.push_back(what);
    }
  }
};

double sample_variance_se(std::span<const double> x, double* variance) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = (v - mean) * (v - mean);
    m2 += d;
    m4 += d * d;
  }
  *variance = m2 / (n - 1.0);
  const double pop = m2 / n;
  return std::sqrt(std::max(m4 / n - pop * pop, 0.0) / n);
}

// ---- simulate ----------------------------------------------------------------

struct SimRow {
  double lambda_t = 0.0;
  double m_t = 0.0;
  std::size_t jumps = 0;
};

void run_simulate(const ExperimentConfig& c, Artifacts& a) {
  const TimeChangeConfig& tc = c.timechange;
  const double T = tc.horizon;
  if (c.export_paths > 0) std::filesystem::create_directories(c.out / "paths");
  const auto rows = parallel_map<SimRow>(
      c.paths,
      [&](std::size_t i) {
        const TimeChangePath lambda = sample_timechange(tc, c.seed, i);
        BrownianPath w(c.seed, i, rng::StreamId::brownian, tc.market_horizon);
        const TimeChangedPath m = time_changed_bm(w, lambda, make_t_grid(lambda, T, c.dt));
        if (i < c.export_paths) {
          std::ofstream lf(c.out / "paths" / ("lambda_" + std::to_string(i) + ".csv"));
          write_csv(lf, lambda);
          std::ofstream mf(c.out / "paths" / ("m_" + std::to_string(i) + ".csv"));
          write_csv(mf, m);
        }
        return SimRow{lambda.terminal(), m.m.value.back(), lambda.jumps().size()};
      },
      c.run);

  a.csv << "experiment_id,path,lambda_T,m_T,n_jumps\n";
  std::vector<double> lam, mt;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    a.csv << c.id << ',' << i << ',' << fmt(rows[i].lambda_t) << ',' << fmt(rows[i].m_t) << ','
          << rows[i].jumps << '\n';
    lam.push_back(rows[i].lambda_t);
    mt.push_back(rows[i].m_t);
  }
  const double expected = expected_terminal(tc);
  const Estimate el = summarize(lam, c.seed, c.dt);
  const Estimate em = summarize(mt, c.seed, c.dt);
  double var = 0.0;
  const double var_se = sample_variance_se(mt, &var);
  a.band(std::abs(el.mean - expected) <= 3.0 * el.std_error + 1e-12,
         "mean Lambda_T " + fmt(el.mean) + " vs expected " + fmt(expected));
  a.band(std::abs(em.mean) <= 3.0 * em.std_error, "mean M_T " + fmt(em.mean) + " not within 3 stderr of 0");
  a.band(std::abs(var - expected) <= 3.0 * var_se,
         "Var M_T " + fmt(var) + " vs E[Lambda_T] " + fmt(expected));
  a.summary["expected_lambda_T"] = num(expected);
  a.summary["mean_lambda_T"] = num(el.mean);
  a.summary["stderr_lambda_T"] = num(el.std_error);
  a.summary["mean_m_T"] = num(em.mean);
  a.summary["stderr_m_T"] = num(em.std_error);
  a.summary["var_m_T"] = num(var);
  a.summary["stderr_var_m_T"] = num(var_se);
}

// ---- verify-cov / convergence -----------------------------------------------

StudySpec make_study(const ExperimentConfig& c) {
  StudySpec spec;
  spec.identity = c.identity;
  spec.timechange = c.timechange;
  spec.options = c.verify;
  const bool t_identity = c.identity == Identity::forward || c.identity == Identity::jacod_i;
  if (t_identity) {
    if (!c.integrand.t_axis()) {
      config_error("field 'integrand.family': '" + c.integrand.family +
                   "' is an r-axis family; identity " + std::string(to_string(c.identity)) +
                   " needs one of constant, time, left_lambda, left_m");
    }
    spec.nu = c.integrand.make_nu();
  } else {
    if (!c.integrand.r_axis()) {
      config_error("field 'integrand.family': '" + c.integrand.family +
                   "' is a t-axis family; identity " + std::string(to_string(c.identity)) +
                   " needs one of constant, gamma, r, brownian");
    }
    spec.nu_tilde = c.integrand.make_nu_tilde();
  }
  if (c.integrator == "identity") {
    spec.integrator = [](const TimeChangePath&, const TimeChangePath&, std::uint64_t,
                         std::uint64_t) { return identity_integrator(); };
  } else if (c.integrator == "gamma") {
    spec.integrator = [](const TimeChangePath&, const TimeChangePath& gamma, std::uint64_t,
                         std::uint64_t) {
      return gamma_integrator(gamma, [](double g) { return g; });
    };
  }
  return spec;
}

std::string formula(const ExperimentConfig& c) {
  return std::string(to_string(c.identity)) + " nu=" + c.integrand.label();
}

/// Refuses t-axis integrands whose E[∫ν² dΛ] does not settle across grids.
void gate(const ExperimentConfig& c, const StudySpec& spec, std::vector<double> dts,
          Artifacts& a) {
  if (!(c.identity == Identity::forward || c.identity == Identity::jacod_i)) return;
  if (spec.nu.is_constant()) return;
  std::sort(dts.begin(), dts.end(), std::greater<>());
  const SquareIntegrabilityReport r = square_integrability_gate(
      spec.nu, c.timechange, dts, std::min(c.gate_paths, c.paths), c.seed);
  json g = json::object();
  g["pass"] = r.pass;
  g["reason"] = r.reason;
  g["dt"] = r.dts;
  json est = json::array();
  for (double e : r.estimates) est.push_back(num(e));
  g["estimates"] = est;
  a.summary["square_integrability_gate"] = g;
  if (!r.pass) {
    throw Error(ErrorCode::NumericalFailure, "square-integrability gate refused integrand '" +
                                                 c.integrand.label() + "': " + r.reason);
  }
}

void write_level_rows(const ExperimentConfig& c, const ConvergenceTable& table, Artifacts& a) {
  a.csv << "experiment_id,formula,dt,n_paths,rms_diff,max_diff,seed\n";
  json levels = json::array();
  for (const ConvergenceLevel& l : table.levels) {
    a.csv << c.id << ',' << formula(c) << ',' << fmt(l.dt) << ',' << l.n << ',' << fmt(l.rms)
          << ',' << fmt(l.max) << ',' << c.seed << '\n';
    levels.push_back({{"dt", l.dt}, {"rms", num(l.rms)}, {"max", num(l.max)}, {"n", l.n}});
  }
  a.summary["formula"] = formula(c);
  a.summary["levels"] = levels;
}

void run_verify(const ExperimentConfig& c, Artifacts& a) {
  const StudySpec spec = make_study(c);
  gate(c, spec, {4.0 * c.dt, 2.0 * c.dt, c.dt}, a);
  const auto pairs = parallel_map<IntegralPair>(
      c.paths, [&](std::size_t i) { return verify_path(spec, c.dt, c.seed, i); }, c.run);
  std::vector<double> diffs;
  bool finite = true;
  for (const auto& p : pairs) {
    diffs.push_back(p.abs_diff);
    finite = finite && std::isfinite(p.lhs) && std::isfinite(p.rhs);
  }
  ConvergenceTable table;
  table.levels.push_back(rms_level(diffs, c.dt));
  write_level_rows(c, table, a);
  const ConvergenceLevel& l = table.levels.front();
  a.band(finite, "non-finite integral");
  const bool constant = c.integrand.family == "constant";
  if (constant) a.band(l.rms <= 1e-12, "constant integrand rms " + fmt(l.rms) + " > 1e-12");
  if (c.tolerance) {
    a.band(l.rms <= *c.tolerance,
           "rms " + fmt(l.rms) + " above tolerance " + fmt(*c.tolerance));
  }
  a.summary["rms"] = num(l.rms);
  a.summary["max"] = num(l.max);
  a.summary["exact"] = constant;
}

void run_convergence(const ExperimentConfig& c, Artifacts& a) {
  const StudySpec spec = make_study(c);
  gate(c, spec, c.dt_levels, a);
  const ConvergenceTable table = convergence_study(spec, c.dt_levels, c.paths, c.seed, c.run);
  write_level_rows(c, table, a);
  a.summary["exact"] = table.exact;
  a.summary["nonincreasing"] = table.nonincreasing();
  a.summary["min_slope"] = c.min_slope;
  if (c.integrand.family == "constant") {
    a.band(table.exact, "constant integrand is not exact to 1e-12");
    return;
  }
  a.summary["slope"] = num(table.slope);
  a.summary["intercept"] = num(table.intercept);
  if (table.exact) return;
  a.band(table.nonincreasing(), "rms is not nonincreasing across levels");
  a.band(table.slope >= c.min_slope,
         "fitted slope " + fmt(table.slope) + " below " + fmt(c.min_slope));
}

// ---- optimize ------------------------------------------------------------------

void run_optimize(const ExperimentConfig& c, Artifacts& a) {
  const MarketSpec& spec = c.market;
  std::vector<NamedStrategy> strategies{c.strategy == "tilde" ? optimal_tilde_strategy()
                                                              : optimal_hat_strategy()};
  if (c.battery) {
    for (auto& s : perturbation_battery()) strategies.push_back(std::move(s));
  }
  const MarketStudy study = run_market_study(spec, strategies, c.paths, c.seed, c.run);
  const double cf = study.closed_form.mean;

  a.csv << "experiment_id,strategy_tag,p,n_paths,dt,mc_value,stderr,closed_form_value,abs_gap\n";
  for (const StrategyEstimate& s : study.strategies) {
    a.csv << c.id << ',' << s.tag << ',' << fmt(spec.p) << ',' << c.paths << ','
          << fmt(spec.dt) << ',' << fmt(s.value.mean) << ',' << fmt(s.value.std_error) << ','
          << fmt(cf) << ',' << fmt(std::abs(s.value.mean - cf)) << '\n';
  }

  const StrategyEstimate& opt = study.strategies.front();
  a.summary["strategy"] = opt.tag;
  a.summary["p"] = spec.p;
  a.summary["closed_form"] = num(cf);
  a.summary["closed_form_stderr"] = num(study.closed_form.std_error);
  a.summary["mc"] = num(opt.value.mean);
  a.summary["stderr"] = num(opt.value.std_error);
  a.summary["abs_gap"] = num(std::abs(opt.value.mean - cf));
  a.summary["rejected"] = opt.rejected;
  a.band(std::abs(opt.value.mean - cf) <= 3.0 * opt.value.std_error,
         "|mc - closed_form| = " + fmt(std::abs(opt.value.mean - cf)) + " > 3 stderr = " +
             fmt(3.0 * opt.value.std_error));

  if (spec.p == 1.0 && spec.theta.kind == ThetaFamily::Kind::constant) {
    const double th = spec.theta.theta0;
    const double analytic =
        std::log(spec.x) + 0.5 * th * th * expected_terminal(spec.timechange);
    a.summary["analytic_value"] = num(analytic);
    a.band(std::abs(opt.value.mean - analytic) <= 3.0 * opt.value.std_error,
           "|mc - (log x + E[Lambda_T] theta^2/2)| = " + fmt(std::abs(opt.value.mean - analytic)) +
               " > 3 stderr");
  }

  if (c.battery) {
    json dominance = json::array();
    bool strictly_lower = false;
    for (std::size_t j = 1; j < study.strategies.size(); ++j) {
      const StrategyEstimate& s = study.strategies[j];
      const Estimate& d = s.diff_vs_first;
      const bool ok = d.mean <= 3.0 * d.std_error;
      const bool lower = d.mean < -3.0 * d.std_error;
      strictly_lower = strictly_lower || lower;
      dominance.push_back({{"tag", s.tag},
                           {"mc", num(s.value.mean)},
                           {"stderr", num(s.value.std_error)},
                           {"diff", num(d.mean)},
                           {"diff_stderr", num(d.std_error)},
                           {"ruined", s.ruined},
                           {"dominated", ok},
                           {"strictly_lower", lower}});
      a.band(ok, s.tag + " beats " + opt.tag + " by " + fmt(d.mean) + " > 3 stderr");
    }
    a.summary["dominance"] = dominance;
    a.summary["power"] = strictly_lower;
    a.band(strictly_lower, "no perturbation scores strictly lower");
  }

  if (c.strategy == "hat" && c.pullback_paths > 0) {
    const auto devs = parallel_map<double>(
        std::min(c.pullback_paths, c.paths),
        [&](std::size_t i) {
          const MarketPaths mp = build_market_paths(spec, c.seed, i);
          return pullback_deviation(optimal_strategy_hat(spec, mp),
                                    optimal_strategy_tilde(spec, mp), mp);
        },
        c.run);
    const double worst = devs.empty() ? 0.0 : *std::max_element(devs.begin(), devs.end());
    a.summary["pullback_max_deviation"] = num(worst);
    a.band(worst <= 1e-12, "pullback deviation " + fmt(worst) + " > 1e-12");
  }
}

// ---- martingale-test -----------------------------------------------------------

void run_martingale(const ExperimentConfig& c, Artifacts& a) {
  const TimeChangeConfig& tc = c.timechange;
  std::vector<double> times{0.0};
  for (double t : c.times) times.push_back(t);
  struct Row {
    std::vector<double> m, lambda;
  };
  const auto rows = parallel_map<Row>(
      c.paths,
      [&](std::size_t i) {
        const TimeChangePath lambda = sample_timechange(tc, c.seed, i);
        BrownianPath w(c.seed, i, rng::StreamId::brownian, tc.market_horizon);
        const std::vector<double> grid(times.begin() + 1, times.end());
        const TimeChangedPath m = time_changed_bm(w, lambda, grid);
        Row row;
        for (double t : times) {
          if (t == 0.0) {
            row.m.push_back(0.0);
            row.lambda.push_back(0.0);
            continue;
          }
          const auto& ts = m.m.t;
          const auto it = std::lower_bound(ts.begin(), ts.end(), t - kTimeTolerance);
          const std::size_t k = static_cast<std::size_t>(it - ts.begin());
          row.m.push_back(m.m.value[k] + c.drift_perturbation * t);
          row.lambda.push_back(m.lambda.value[k]);
        }
        return row;
      },
      c.run);
  std::vector<std::vector<double>> m, lambda;
  for (const auto& r : rows) {
    m.push_back(r.m);
    lambda.push_back(r.lambda);
  }
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t j = i + 1; j < times.size(); ++j) pairs.emplace_back(times[i], times[j]);
  }
  const MartingaleReport report =
      martingale_test(times, m, lambda, pairs, default_past_functionals());

  a.csv << "experiment_id,s,t,g,mean,stderr,pass\n";
  for (const auto& tr : report.triples) {
    a.csv << c.id << ',' << fmt(tr.s) << ',' << fmt(tr.t) << ',' << tr.g << ','
          << fmt(tr.mean) << ',' << fmt(tr.std_error) << ',' << (tr.pass ? 1 : 0) << '\n';
    a.band(tr.pass, "triple (" + fmt(tr.s) + ", " + fmt(tr.t) + ", " + tr.g + ") mean " +
                        fmt(tr.mean) + " outside 3 stderr " + fmt(3.0 * tr.std_error));
  }
  // Var(M_T) against E[Λ_T] at the last test time when it is the horizon.
  std::vector<double> mt;
  for (const auto& r : rows) mt.push_back(r.m.back());
  double var = 0.0;
  const double se = sample_variance_se(mt, &var);
  a.summary["triples"] = report.triples.size();
  a.summary["drift_perturbation"] = c.drift_perturbation;
  a.summary["var_m_T"] = num(var);
  a.summary["stderr_var_m_T"] = num(se);
  if (std::abs(times.back() - tc.horizon) <= kTimeTolerance && c.drift_perturbation == 0.0) {
    const double expected = expected_terminal(tc);
    a.summary["expected_lambda_T"] = num(expected);
    a.band(std::abs(var - expected) <= 3.0 * se,
           "Var M_T " + fmt(var) + " vs E[Lambda_T] " + fmt(expected));
  }
}

}  // namespace

// ---- public --------------------------------------------------------------------

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::simulate: return "simulate";
    case ExperimentKind::verify_cov: return "verify-cov";
    case ExperimentKind::optimize: return "optimize";
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::martingale_test: return "martingale-test";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (auto k : {ExperimentKind::simulate, ExperimentKind::verify_cov, ExperimentKind::optimize,
                 ExperimentKind::convergence, ExperimentKind::martingale_test}) {
    if (name == to_string(k)) return k;
  }
  config_error("unknown experiment kind '" + std::string(name) + "'");
}

std::function<double(double)> FunctionSpec::make() const {
  const double a = scale, b = shift, k = frequency, p = pole;
  if (base == "identity") return [=](double x) { return a * (k * x) + b; };
  if (base == "square") return [=](double x) { return a * (k * x) * (k * x) + b; };
  if (base == "sin") return [=](double x) { return a * std::sin(k * x) + b; };
  if (base == "cos") return [=](double x) { return a * std::cos(k * x) + b; };
  if (base == "exp") return [=](double x) { return a * std::exp(k * x) + b; };
  if (base == "tanh") return [=](double x) { return a * std::tanh(k * x) + b; };
  if (base == "reciprocal_gap") return [=](double x) { return a / (p - k * x) + b; };
  config_error("unknown function '" + base + "'");
}

std::string FunctionSpec::label(std::string_view arg) const {
  std::string inner = frequency == 1.0 ? std::string(arg) : fmt(frequency) + "*" + std::string(arg);
  std::string core;
  if (base == "identity") core = inner;
  else if (base == "square") core = "(" + inner + ")^2";
  else if (base == "reciprocal_gap") core = "1/(" + fmt(pole) + "-" + inner + ")";
  else core = base + "(" + inner + ")";
  if (scale != 1.0) core = fmt(scale) + "*" + core;
  if (shift != 0.0) core += "+" + fmt(shift);
  return core;
}

bool IntegrandConfig::t_axis() const {
  return family == "constant" || family == "time" || family == "left_lambda" ||
         family == "left_m";
}

bool IntegrandConfig::r_axis() const {
  return family == "constant" || family == "gamma" || family == "r" || family == "brownian";
}

IntegrandSpec IntegrandConfig::make_nu() const {
  IntegrandSpec nu;
  if (family == "constant") nu = IntegrandSpec::constant(value);
  else if (family == "time") nu = IntegrandSpec::of_time(function.make(), label());
  else if (family == "left_lambda") nu = IntegrandSpec::of_left_lambda(function.make(), label());
  else if (family == "left_m") nu = IntegrandSpec::of_left_m(function.make(), label());
  else config_error("field 'integrand.family': '" + family + "' has no t-axis form");
  nu.square_integrability_bound = bound;
  return nu;
}

RProcessFactory IntegrandConfig::make_nu_tilde() const {
  if (family == "constant") {
    const double c = value;
    return [c](const RContext&) { return constant_process(c); };
  }
  const auto f = function.make();
  if (family == "gamma") {
    return [f](const RContext& ctx) { return process_of_gamma(ctx.gamma, f); };
  }
  if (family == "r") return [f](const RContext&) { return process_of_r(f); };
  if (family == "brownian") {
    return [](const RContext& ctx) { return brownian_process(ctx.w); };
  }
  config_error("field 'integrand.family': '" + family + "' has no r-axis form");
}

std::string IntegrandConfig::label() const {
  if (family == "constant") return fmt(value);
  if (family == "time") return function.label("s");
  if (family == "left_lambda") return function.label("Lambda_{s-}");
  if (family == "left_m") return function.label("M_{s-}");
  if (family == "gamma") return function.label("Gamma_r");
  if (family == "r") return function.label("r");
  return "W_r";
}

std::vector<std::string> ExperimentConfig::command() const {
  std::vector<std::string> cmd{std::string(to_string(kind)), "--config",
                               std::filesystem::absolute(source).string(),
                               "--seed", std::to_string(seed),
                               "--paths", std::to_string(paths),
                               "--out", std::filesystem::absolute(out).string()};
  if (kind != ExperimentKind::convergence || dt_override) {
    cmd.push_back("--dt");
    cmd.push_back(fmt(kind == ExperimentKind::convergence ? *dt_override : dt));
  }
  cmd.push_back("--serial");
  return cmd;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentConfig parse_experiment_config(std::string_view toml_text, ExperimentKind kind,
                                         const Overrides& overrides, std::string source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "cannot parse " << source << ": " << e.description() << " at line "
       << e.source().begin.line;
    config_error(os.str());
  }
  const Section top(&root, "");
  top.check_keys({"experiment", "id", "seed", "paths", "dt", "dt_levels", "levels", "out",
                  "workers", "serial", "identity", "enforce_adapted", "dr", "min_slope",
                  "tolerance", "gate_paths", "integrator", "strategy", "battery",
                  "pullback_paths", "export_paths", "times", "drift_perturbation",
                  "timechange", "integrand", "market"});

  ExperimentConfig c;
  c.kind = kind;
  c.source = source;
  c.config_hash = fnv1a64(toml_text);
  if (top.has("experiment")) {
    const std::string declared = top.string("experiment", "");
    if (parse_experiment_kind(declared) != kind) {
      config_error("field 'experiment': config is for '" + declared + "', not '" +
                   std::string(to_string(kind)) + "'");
    }
  }
  c.id = top.string("id", std::filesystem::path(source).stem().string());
  if (c.id.find_first_of(",\n\"") != std::string::npos) {
    config_error("field 'id': must not contain commas, quotes or newlines");
  }

  if (overrides.seed) {
    c.seed = *overrides.seed;
  } else {
    const auto seed = top.opt_integer("seed");
    if (!seed) config_error("field 'seed': required (pass --seed or set seed in the config)");
    if (*seed < 0) config_error("field 'seed': must be >= 0");
    c.seed = static_cast<std::uint64_t>(*seed);
  }
  c.paths = overrides.paths ? *overrides.paths : top.count("paths", 1000);
  if (c.paths < 2) config_error("field 'paths': need at least 2 paths (got " + std::to_string(c.paths) + ")");
  c.dt_override = overrides.dt;
  c.dt = overrides.dt ? *overrides.dt : top.number("dt", 1.0 / 128.0);
  require(c.dt > 0.0 && std::isfinite(c.dt), "dt", "must be positive", c.dt);
  c.out = overrides.out ? *overrides.out : top.string("out", "out/" + c.id);
  c.run.serial = overrides.serial || top.boolean("serial", false);
  c.run.workers = overrides.workers ? *overrides.workers : top.count("workers", 0);

  const Section tc = top.sub("timechange");
  c.timechange = parse_timechange(tc);
  const double T = c.timechange.horizon;

  // verify-cov, convergence
  c.identity = parse_identity(top.choice("identity", "forward",
                                         {"forward", "backward", "jacod_i", "jacod_ii"}));
  c.verify.dr = top.number("dr", 0.0);
  c.verify.enforce_adapted = top.boolean("enforce_adapted", true);
  c.min_slope = top.number("min_slope", 0.4);
  c.tolerance = top.opt_number("tolerance");
  c.gate_paths = top.count("gate_paths", 1000);
  c.integrator = top.choice("integrator", "flattened_brownian",
                            {"flattened_brownian", "identity", "gamma"});
  const Section in = top.sub("integrand");
  in.check_keys({"family", "value", "function", "scale", "shift", "frequency", "pole", "bound"});
  c.integrand.family = in.choice("family", "constant",
                                 {"constant", "time", "left_lambda", "left_m", "gamma", "r",
                                  "brownian"});
  c.integrand.value = in.number("value", 1.0);
  c.integrand.function = parse_function(in);
  c.integrand.bound = in.opt_number("bound");

  if (kind == ExperimentKind::convergence) {
    if (top.has("dt_levels") && !overrides.dt) {
      c.dt_levels = *top.numbers("dt_levels");
    } else {
      const std::size_t levels = top.count("levels", 5);
      c.dt_levels = halving_levels(c.dt, static_cast<int>(levels));
    }
    if (c.dt_levels.size() < 4) config_error("field 'dt_levels': need at least 4 levels");
    for (std::size_t i = 0; i < c.dt_levels.size(); ++i) {
      require(c.dt_levels[i] > 0.0, "dt_levels", "entries must be positive", c.dt_levels[i]);
      if (i > 0 && !(c.dt_levels[i] < c.dt_levels[i - 1])) {
        config_error("field 'dt_levels': must be strictly decreasing");
      }
    }
    c.dt = c.dt_levels.back();
  }

  // optimize
  const Section mk = top.sub("market");
  mk.check_keys({"x", "p", "s0", "dr", "theta", "theta0", "theta_sup", "function", "scale",
                 "shift", "frequency", "pole", "h0_measurable"});
  c.market.x = mk.number("x", 1.0);
  require(c.market.x > 0.0 && std::isfinite(c.market.x), mk.field("x"),
          "initial wealth must be positive", c.market.x);
  c.market.p = mk.number("p", 2.0);
  require(c.market.p > 0.0 && std::isfinite(c.market.p), mk.field("p"),
          "risk aversion must be positive", c.market.p);
  c.market.s0 = mk.number("s0", 10.0);
  require(std::isfinite(c.market.s0), mk.field("s0"), "must be finite", c.market.s0);
  c.market.dr = mk.number("dr", 0.0);
  c.market.theta = parse_theta(mk);
  c.market.timechange = c.timechange;
  c.market.dt = c.dt;
  c.strategy = top.choice("strategy", "hat", {"hat", "tilde"});
  c.battery = top.boolean("battery", true);
  c.pullback_paths = top.count("pullback_paths", 100);
  if (kind == ExperimentKind::optimize) {
    try {
      validate(c.market);
    } catch (const Error& e) {
      config_error(std::string("section 'market': ") + e.what());
    }
  }

  // simulate, martingale-test
  c.export_paths = top.count("export_paths", 0);
  c.times = top.numbers("times").value_or(std::vector<double>{0.5 * T, T});
  if (c.times.empty()) config_error("field 'times': must not be empty");
  for (std::size_t i = 0; i < c.times.size(); ++i) {
    require(c.times[i] > 0.0 && c.times[i] <= T, "times", "entries must lie in (0, horizon]",
            c.times[i]);
    if (i > 0 && !(c.times[i] > c.times[i - 1])) {
      config_error("field 'times': must be strictly increasing");
    }
  }
  c.drift_perturbation = top.number("drift_perturbation", 0.0);
  if (kind == ExperimentKind::martingale_test && c.paths < 1000) {
    config_error("field 'paths': martingale-test needs at least 1000 paths (got " +
                 std::to_string(c.paths) + ")");
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file, ExperimentKind kind,
                                        const Overrides& overrides) {
  std::ifstream in(file, std::ios::binary);
  if (!in) config_error("cannot read config file '" + file.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment_config(text.str(), kind, overrides, file.string());
}

ExperimentOutcome run_experiment(const ExperimentConfig& c) {
  std::filesystem::create_directories(c.out);
  Artifacts a;
  switch (c.kind) {
    case ExperimentKind::simulate: run_simulate(c, a); break;
    case ExperimentKind::verify_cov: run_verify(c, a); break;
    case ExperimentKind::convergence: run_convergence(c, a); break;
    case ExperimentKind::optimize: run_optimize(c, a); break;
    case ExperimentKind::martingale_test: run_martingale(c, a); break;
  }

  json summary = json::object();
  summary["experiment"] = std::string(to_string(c.kind));
  summary["id"] = c.id;
  summary["seed"] = c.seed;
  summary["n_paths"] = c.paths;
  summary["dt"] = c.dt;
  summary["pass"] = a.outcome.pass;
  summary["failures"] = a.outcome.failures;
  summary["results"] = a.summary;

  json manifest = json::object();
  manifest["tool"] = "tcbm";
  manifest["version"] = TCBM_VERSION;
  manifest["experiment"] = std::string(to_string(c.kind));
  manifest["id"] = c.id;
  manifest["config"] = std::filesystem::absolute(c.source).string();
  manifest["config_hash"] = "fnv1a64:" + hex64(c.config_hash);
  manifest["seed"] = c.seed;
  manifest["n_paths"] = c.paths;
  manifest["dt"] = c.dt;
  if (!c.dt_levels.empty()) manifest["dt_levels"] = c.dt_levels;
  manifest["command"] = c.command();
  manifest["outputs"] = {"results.csv", "summary.json"};

  write_text(c.out / "results.csv", a.csv.str());
  write_text(c.out / "summary.json", summary.dump(2) + "\n");
  write_text(c.out / "manifest.json", manifest.dump(2) + "\n");
  return a.outcome;
}

int run_cli(ExperimentKind kind, const std::filesystem::path& config_file,
            const Overrides& overrides, std::ostream& log) {
  try {
    const ExperimentConfig config = load_experiment_config(config_file, kind, overrides);
    const ExperimentOutcome outcome = run_experiment(config);
    for (const auto& f : outcome.failures) log << "FAIL: " << f << '\n';
    log << to_string(kind) << ' ' << config.id << ": " << (outcome.pass ? "pass" : "fail")
        << " (" << (config.out / "summary.json").string() << ")\n";
    return outcome.pass ? 0 : 1;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    const bool config = e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::InvalidConfig;
    return config ? 2 : 1;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace tcbm
