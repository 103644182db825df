// Acceptance checks AC1..AC10. One [PASS]/[FAIL] line per criterion; exit 1 on
// any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tcbm/convergence.hpp"
#include "tcbm/error.hpp"
#include "tcbm/experiment.hpp"
#include "tcbm/montecarlo.hpp"
#include "tcbm/noise.hpp"
#include "tcbm/portfolio.hpp"
#include "tcbm/stochint.hpp"
#include "tcbm/timechange.hpp"

using namespace tcbm;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20240601;
constexpr std::size_t kPaths = 1000;
constexpr std::size_t kMcPaths = 10000;

struct Check {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " FAILED: " << what << ';';
    }
  }
};

std::string g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

TimeChangeConfig three_jumps() {
  TimeChangeConfig c;
  c.drift_slope = 1.0;
  c.jumps.count = JumpCountLaw::fixed;
  c.jumps.fixed_count = 3;
  c.jumps.size_mean = 0.25;
  c.min_separation = 0.02;
  return c;
}

TimeChangeConfig poisson_clock() {
  TimeChangeConfig c;
  c.drift_slope = 1.0;
  c.jumps.count = JumpCountLaw::poisson;
  c.jumps.poisson_rate = 2.0;
  c.jumps.size_mean = 0.25;
  return c;
}

const std::vector<double> kLevels = halving_levels(std::ldexp(1.0, -5), 5);

/// Runs one study and applies the convergence band. Returns the table.
ConvergenceTable study(const StudySpec& spec, const std::string& label, bool constant,
                       Check& check) {
  const ConvergenceTable t = convergence_study(spec, kLevels, kPaths, kSeed);
  check.detail << ' ' << label << ":rms=" << g(t.levels.back().rms);
  if (constant) {
    check.require(t.exact, label + " not exact to 1e-12");
  } else if (!t.exact) {
    check.detail << ",slope=" << g(t.slope);
    check.require(t.nonincreasing(), label + " rms not nonincreasing");
    check.require(t.slope >= 0.4, label + " slope " + g(t.slope) + " < 0.4");
  }
  return t;
}

Check ac1() {
  Check c;
  const auto start = std::chrono::steady_clock::now();
  StudySpec spec;
  spec.identity = Identity::forward;
  spec.timechange = three_jumps();
  const auto id = [](double x) { return x; };
  const std::vector<std::pair<std::string, IntegrandSpec>> cases{
      {"const", IntegrandSpec::constant(1.0)},
      {"s", IntegrandSpec::of_time(id, "s")},
      {"lambda_s-", IntegrandSpec::of_left_lambda(id, "Λ_{s-}")},
      {"m_s-", IntegrandSpec::of_left_m(id, "M_{s-}")}};
  for (const auto& [label, nu] : cases) {
    spec.nu = nu;
    study(spec, label, nu.is_constant(), c);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.detail << " time=" << g(secs) << "s";
  c.require(secs <= 60.0, "runtime above 60 s");
  return c;
}

Check ac2() {
  Check c;
  StudySpec spec;
  spec.identity = Identity::backward;
  spec.timechange = three_jumps();
  const std::vector<std::pair<std::string, RProcessFactory>> cases{
      {"const", [](const RContext&) { return constant_process(1.0); }},
      {"gamma", [](const RContext& x) { return process_of_gamma(x.gamma, [](double v) { return v; }); }},
      {"cos3gamma",
       [](const RContext& x) {
         return process_of_gamma(x.gamma, [](double v) { return std::cos(3.0 * v); });
       }}};
  double finest = 0.0;
  for (const auto& [label, f] : cases) {
    spec.nu_tilde = f;
    const auto t = study(spec, label, label == "const", c);
    finest = std::max(finest, t.levels.back().rms);
  }
  spec.nu_tilde = [](const RContext&) { return process_of_r([](double r) { return r; }); };
  spec.options.enforce_adapted = false;
  const ConvergenceTable bad = convergence_study(spec, kLevels, kPaths, kSeed);
  const double rms = bad.levels.back().rms;
  c.detail << " non-adapted r:rms=" << g(rms) << " vs 10x" << g(finest);
  c.require(rms > 10.0 * finest, "non-adapted integrand not detected");
  // With the check on, the same integrand is refused outright.
  spec.options.enforce_adapted = true;
  bool refused = false;
  try {
    verify_path(spec, kLevels.back(), kSeed, 0);
  } catch (const Error& e) {
    refused = e.code() == ErrorCode::NotLambdaAdapted;
  }
  c.require(refused, "non-adapted integrand not refused");
  return c;
}

Check ac3() {
  Check c;
  StudySpec i;
  i.identity = Identity::jacod_i;
  i.timechange = three_jumps();
  i.nu = IntegrandSpec::of_left_m([](double m) { return m; }, "M_{s-}");
  study(i, "jacod_i", false, c);
  StudySpec ii;
  ii.identity = Identity::jacod_ii;
  ii.timechange = three_jumps();
  ii.nu_tilde = [](const RContext& x) { return brownian_process(x.w); };
  study(ii, "jacod_ii", false, c);
  return c;
}

Check ac4() {
  Check c;
  const TimeChangeConfig tc = poisson_clock();
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const TimeChangePath lambda = sample_timechange(tc, kSeed, i);
    const TimeChangePath gamma = generalized_inverse(lambda);
    std::vector<double> ts;
    for (int k = 0; k <= 1000; ++k) ts.push_back(tc.horizon * k / 1000.0);
    for (const auto& j : lambda.jumps()) ts.push_back(j.time);
    for (double t : ts) {
      if (t >= tc.horizon) continue;  // Γ(Λ_T) = T only up to the flat tail convention
      worst = std::max(worst, std::abs(gamma.eval(lambda.eval(t)) - t));
    }
  }
  c.detail << " max|Γ(Λ_t) - t|=" << g(worst);
  c.require(worst <= 1e-10, "Γ∘Λ differs from the identity");

  const TimeChangePath one = build_deterministic(affine_spec(1.0, {{0.5, 1.0}}, 1.0, 2.0));
  const TimeChangePath inv = generalized_inverse(one);
  double dev = 0.0, dev_inv = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double t = k / 10000.0;
    dev = std::max(dev, std::abs(one.eval(t) - (t + (t >= 0.5 ? 1.0 : 0.0))));
    const double r = 2.0 * k / 10000.0;
    const double expected = r < 0.5 ? r : r < 1.5 ? 0.5 : r < 2.0 ? r - 1.0 : 1.0;
    dev_inv = std::max(dev_inv, std::abs(inv.eval(r) - expected));
  }
  c.detail << " one-jump dev=" << g(dev) << " inverse dev=" << g(dev_inv);
  c.require(dev <= 1e-12 && dev_inv <= 1e-12, "one-jump example mismatch");
  return c;
}

struct Sampled {
  std::vector<std::vector<double>> m, lambda;
};

Sampled sample_m(const TimeChangeConfig& tc, const std::vector<double>& times, double drift) {
  Sampled s;
  const std::vector<double> grid(times.begin() + 1, times.end());
  for (std::size_t i = 0; i < kMcPaths; ++i) {
    const TimeChangePath lambda = sample_timechange(tc, kSeed, i);
    BrownianPath w(kSeed, i, rng::StreamId::brownian, tc.market_horizon);
    const TimeChangedPath m = time_changed_bm(w, lambda, grid);
    std::vector<double> mv{0.0}, lv{0.0};
    for (double t : grid) {
      const auto it = std::lower_bound(m.m.t.begin(), m.m.t.end(), t - kTimeTolerance);
      const std::size_t k = static_cast<std::size_t>(it - m.m.t.begin());
      mv.push_back(m.m.value[k] + drift * t);
      lv.push_back(m.lambda.value[k]);
    }
    s.m.push_back(mv);
    s.lambda.push_back(lv);
  }
  return s;
}

MartingaleReport triples(const Sampled& s, const std::vector<double>& times) {
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t j = i + 1; j < times.size(); ++j) pairs.emplace_back(times[i], times[j]);
  }
  return martingale_test(times, s.m, s.lambda, pairs, default_past_functionals());
}

Check ac5() {
  Check c;
  const TimeChangeConfig tc = poisson_clock();
  const std::vector<double> times{0.0, 0.5, 1.0};
  const Sampled s = sample_m(tc, times, 0.0);

  std::vector<double> mt;
  for (const auto& row : s.m) mt.push_back(row.back());
  const Estimate mean = summarize(mt);
  double m2 = 0.0, m4 = 0.0;
  for (double x : mt) {
    const double d = x - mean.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  const double n = static_cast<double>(mt.size());
  const double var = m2 / (n - 1.0);
  const double var_se = std::sqrt((m4 / n - (m2 / n) * (m2 / n)) / n);
  const double expected = expected_terminal(tc);
  c.detail << " mean=" << g(mean.mean) << "±" << g(mean.std_error) << " var=" << g(var) << "±"
           << g(var_se) << " E[Λ_T]=" << g(expected);
  c.require(std::abs(expected - 1.5) <= 1e-12, "E[Λ_T] != 1.5");
  c.require(std::abs(mean.mean) <= 3.0 * mean.std_error, "mean M_T outside 3 stderr");
  c.require(std::abs(var - expected) <= 3.0 * var_se, "Var M_T outside 3 stderr");

  const MartingaleReport r = triples(s, times);
  std::size_t passed = 0;
  for (const auto& t : r.triples) passed += t.pass ? 1 : 0;
  c.detail << " triples " << passed << "/" << r.triples.size();
  c.require(r.pass, "increment-orthogonality triple failed");

  const MartingaleReport adv = triples(sample_m(tc, times, 0.1), times);
  c.detail << " adversarial " << (adv.pass ? "passes" : "fails");
  c.require(!adv.pass, "drifted process not detected");
  return c;
}

MarketSpec identity_market(double p) {
  MarketSpec s;
  s.p = p;
  s.dt = std::ldexp(1.0, -9);
  s.timechange.kind = TimeChangeKind::deterministic;
  s.timechange.market_horizon = 1.0;
  return s;
}

MarketSpec random_gamma_market() {
  MarketSpec s;
  s.p = 2.0;
  s.dt = std::ldexp(1.0, -9);
  s.timechange = poisson_clock();
  s.timechange.min_separation = 10.0 * s.dt;
  s.theta = ThetaFamily::of_gamma([](double v) { return 0.5 * (1.0 + v); }, 1.0);
  return s;
}

MarketSpec log_deterministic_market() {
  MarketSpec s = identity_market(1.0);
  s.x = std::exp(1.0);
  s.timechange.drift_slope = 2.0;
  s.timechange.market_horizon = 2.0;
  return s;
}

MarketSpec log_random_market() {
  MarketSpec s = random_gamma_market();
  s.p = 1.0;
  s.theta = ThetaFamily::constant(1.0);
  return s;
}

struct Market {
  std::string name;
  MarketSpec spec;
  NamedStrategy optimal;
  MarketStudy study;
};

std::vector<Market>& markets() {
  static std::vector<Market> all = [] {
    std::vector<Market> m{{"p2", identity_market(2.0), optimal_hat_strategy(), {}},
                          {"p0.5", identity_market(0.5), optimal_hat_strategy(), {}},
                          {"gamma", random_gamma_market(), optimal_hat_strategy(), {}},
                          {"log", log_deterministic_market(), optimal_hat_strategy(), {}},
                          {"log-random", log_random_market(), optimal_tilde_strategy(), {}}};
    for (auto& x : m) {
      std::vector<NamedStrategy> st{x.optimal};
      for (auto& b : perturbation_battery()) st.push_back(b);
      x.study = run_market_study(x.spec, st, kMcPaths, kSeed);
    }
    return m;
  }();
  return all;
}

const Market& market(const std::string& name) {
  for (const auto& m : markets()) {
    if (m.name == name) return m;
  }
  throw std::logic_error("unknown market " + name);
}

void value_band(Check& c, const Market& m, double target, const std::string& what) {
  const Estimate& v = m.study.strategies.front().value;
  c.detail << ' ' << m.name << ":mc=" << g(v.mean) << "±" << g(v.std_error) << " target="
           << g(target);
  c.require(std::abs(v.mean - target) <= 3.0 * v.std_error, m.name + " " + what);
}

Check ac6() {
  Check c;
  value_band(c, market("p2"), -std::exp(-0.25), "off -e^{-0.25}");
  value_band(c, market("p0.5"), 2.0 * std::exp(0.5), "off 2e^{0.5}");
  c.require(std::abs(market("p2").study.closed_form.mean + 0.778801) <= 1e-6,
            "closed form p=2");
  c.require(std::abs(market("p0.5").study.closed_form.mean - 3.29744) <= 1e-5,
            "closed form p=0.5");
  const Market& r = market("gamma");
  value_band(c, r, r.study.closed_form.mean, "off the per-path closed-form average");
  return c;
}

Check ac7() {
  Check c;
  value_band(c, market("log"), 2.0, "off 2.0");
  const Market& r = market("log-random");
  value_band(c, r, std::log(r.spec.x) + 0.5 * expected_terminal(r.spec.timechange),
             "off log x + E[Λ_T]/2");
  return c;
}

Check ac8() {
  Check c;
  for (const Market& m : markets()) {
    bool lower = false;
    for (std::size_t j = 1; j < m.study.strategies.size(); ++j) {
      const auto& s = m.study.strategies[j];
      const Estimate& d = s.diff_vs_first;
      c.require(d.mean <= 3.0 * d.std_error, m.name + " " + s.tag + " beats the optimum");
      lower = lower || d.mean < -3.0 * d.std_error;
    }
    c.detail << ' ' << m.name << (lower ? ":power" : ":no-power");
    c.require(lower, m.name + " has no strictly lower perturbation");
  }
  return c;
}

Check ac9() {
  Check c;
  for (const MarketSpec& spec : {random_gamma_market(), identity_market(2.0)}) {
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 100; ++i) {
      const MarketPaths mp = build_market_paths(spec, kSeed, i);
      worst = std::max(worst, pullback_deviation(optimal_strategy_hat(spec, mp),
                                                 optimal_strategy_tilde(spec, mp), mp));
    }
    c.detail << " max=" << g(worst);
    c.require(worst <= 1e-12, "pullback deviation above 1e-12");
  }
  return c;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Check ac10() {
  Check c;
  const std::vector<std::pair<std::string, ExperimentKind>> configs{
      {"simulate_poisson", ExperimentKind::simulate},
      {"verify_constant", ExperimentKind::verify_cov},
      {"convergence_forward_left_m", ExperimentKind::convergence},
      {"convergence_backward_nonadapted", ExperimentKind::convergence},
      {"martingale_adversarial", ExperimentKind::martingale_test},
      {"optimize_random_gamma", ExperimentKind::optimize}};
  const fs::path root = fs::temp_directory_path() / "tcbm_acceptance";
  fs::remove_all(root);
  for (const auto& [name, kind] : configs) {
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
      Overrides ov;
      ov.serial = true;
      ov.out = (root / name / std::to_string(run)).string();
      const ExperimentConfig cfg = load_experiment_config(
          fs::path(TCBM_SOURCE_DIR) / "configs" / (name + ".toml"), kind, ov);
      run_experiment(cfg);
      csv[run] = slurp(fs::path(*ov.out) / "results.csv");
    }
    const bool same = !csv[0].empty() && csv[0] == csv[1];
    c.detail << ' ' << name << (same ? ":identical" : ":differs");
    c.require(same, name + " results differ between serial reruns");
  }
  return c;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria{
      {"AC1 forward change of variable", ac1},
      {"AC2 backward change of variable", ac2},
      {"AC3 Jacod cases", ac3},
      {"AC4 generalized inverse", ac4},
      {"AC5 martingale suite", ac5},
      {"AC6 power utility", ac6},
      {"AC7 log utility", ac7},
      {"AC8 dominance", ac8},
      {"AC9 pullback", ac9},
      {"AC10 reproducibility", ac10}};
  bool all = true;
  for (const auto& [name, run] : criteria) {
    Check c;
    try {
      c = run();
    } catch (const std::exception& e) {
      c.pass = false;
      c.detail << " exception: " << e.what();
    }
    all = all && c.pass;
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << name << " |" << c.detail.str()
              << std::endl;
  }
  return all ? 0 : 1;
}
