#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "tcbm/convergence.hpp"
#include "tcbm/error.hpp"
#include "tcbm/montecarlo.hpp"
#include "tcbm/noise.hpp"

using namespace tcbm;

namespace {

double w1_squared(std::uint64_t seed, std::uint64_t path) {
  BrownianPath w(seed, path);
  w.refine({1.0});
  return w.at(1.0) * w.at(1.0);
}

TimeChangeConfig poisson_config() {
  TimeChangeConfig c;
  c.jumps.count = JumpCountLaw::poisson;
  c.jumps.poisson_rate = 2.0;
  c.jumps.size_mean = 0.25;
  return c;
}

struct Samples {
  std::vector<double> times;
  std::vector<std::vector<double>> m, lambda;
};

Samples sample_m(const TimeChangeConfig& c, std::size_t n, std::uint64_t seed, double drift) {
  Samples s;
  s.times = {0.0, 0.25, 0.5, 1.0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto lam = sample_timechange(c, seed, i);
    BrownianPath w(seed, i, rng::StreamId::brownian, c.market_horizon);
    std::vector<double> mi, li;
    for (double t : s.times) {
      const double r = lam.eval(t);
      w.refine({r});
      mi.push_back(w.at(r) + drift * t);
      li.push_back(r);
    }
    s.m.push_back(mi);
    s.lambda.push_back(li);
  }
  return s;
}

std::vector<std::pair<double, double>> all_pairs(const std::vector<double>& t) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i + 1; j < t.size(); ++j) out.emplace_back(t[i], t[j]);
  return out;
}

}  // namespace

TEST(Estimate, ConstantFunctional) {
  const Estimate e = run_estimate([](std::uint64_t, std::uint64_t) { return 7.0; }, 100, 1);
  EXPECT_EQ(e.mean, 7.0);
  EXPECT_EQ(e.std_error, 0.0);
  EXPECT_EQ(e.n, 100u);
}

TEST(Estimate, ChiSquareMoment) {
  const Estimate e = run_estimate(w1_squared, 10000, 42);
  EXPECT_LE(std::abs(e.mean - 1.0), 3.0 * e.std_error);
}

TEST(Estimate, DeterministicAcrossRunsAndWorkers) {
  const Estimate a = run_estimate(w1_squared, 5000, 8, 0.0, RunOptions{true, 1});
  const Estimate b = run_estimate(w1_squared, 5000, 8, 0.0, RunOptions{true, 1});
  const Estimate c = run_estimate(w1_squared, 5000, 8, 0.0, RunOptions{false, 4});
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_EQ(a.mean, c.mean);
  EXPECT_EQ(a.std_error, c.std_error);
}

TEST(Estimate, StderrShrinksWithDoubling) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Estimate a = run_estimate(w1_squared, 10000, seed);
    const Estimate b = run_estimate(w1_squared, 20000, seed + 100);
    const double ratio = b.std_error / a.std_error;
    EXPECT_GE(ratio, 0.6);
    EXPECT_LE(ratio, 0.82);
  }
}

TEST(ParallelMap, IndexOrderAndErrors) {
  const auto v = parallel_map<int>(1000, [](std::size_t i) { return static_cast<int>(i * i); },
                                   RunOptions{false, 3});
  for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(v[i], static_cast<int>(i * i));
  EXPECT_THROW(parallel_map<int>(100,
                                 [](std::size_t i) -> int {
                                   if (i == 57) throw std::runtime_error("boom");
                                   return 0;
                                 },
                                 RunOptions{false, 4}),
               std::runtime_error);
}

TEST(Convergence, FitRecoversSlope) {
  ConvergenceTable t;
  for (double dt : halving_levels(0.1, 5)) t.levels.push_back({dt, 2.0 * std::sqrt(dt), 0.0, 10});
  fit_convergence(t);
  EXPECT_NEAR(t.slope, 0.5, 1e-12);
  EXPECT_NEAR(t.intercept, std::log(2.0), 1e-12);
  EXPECT_TRUE(t.nonincreasing());
  EXPECT_FALSE(t.exact);
}

TEST(Convergence, ExactAndOrdering) {
  ConvergenceTable t;
  for (double dt : halving_levels(0.1, 4)) t.levels.push_back({dt, 1e-15, 1e-15, 10});
  fit_convergence(t);
  EXPECT_TRUE(t.exact);
  ConvergenceTable bad;
  bad.levels = {{0.1, 1.0, 1.0, 1}, {0.2, 0.5, 0.5, 1}};
  EXPECT_THROW(fit_convergence(bad), Error);
}

TEST(Convergence, ConstantIntegrandIsExact) {
  StudySpec spec;
  spec.identity = Identity::forward;
  spec.timechange.jumps.fixed_count = 3;
  spec.timechange.min_separation = 0.02;
  const auto table = convergence_study(spec, halving_levels(1.0 / 32, 4), 100, 3);
  EXPECT_TRUE(table.exact);
  for (const auto& l : table.levels) EXPECT_LE(l.rms, 1e-12);
  const auto three = halving_levels(1.0 / 32, 3);
  EXPECT_THROW(convergence_study(spec, three, 10, 3), Error);
}

TEST(Martingale, IdentityTimeChangePasses) {
  TimeChangeConfig c;
  c.kind = TimeChangeKind::deterministic;
  c.market_horizon = 1.0;
  const Samples s = sample_m(c, 2000, 5, 0.0);
  const auto pairs = all_pairs(s.times);
  const auto report = martingale_test(s.times, s.m, s.lambda, pairs, default_past_functionals());
  EXPECT_TRUE(report.pass);
  EXPECT_EQ(report.triples.size(), pairs.size() * 3);
}

TEST(Martingale, PoissonSamplerPassesConstantFunctional) {
  const Samples s = sample_m(poisson_config(), 10000, 6, 0.0);
  const auto pairs = all_pairs(s.times);
  const std::vector<NamedFunctional> one{default_past_functionals().front()};
  EXPECT_TRUE(martingale_test(s.times, s.m, s.lambda, pairs, one).pass);
}

TEST(Martingale, DriftedProcessFails) {
  const Samples s = sample_m(poisson_config(), 10000, 6, 0.1);
  const std::vector<std::pair<double, double>> pairs{{0.0, 1.0}};
  const std::vector<NamedFunctional> one{default_past_functionals().front()};
  const auto report = martingale_test(s.times, s.m, s.lambda, pairs, one);
  EXPECT_FALSE(report.pass);
}

TEST(Ks, StatisticAndCritical) {
  const std::vector<double> a{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(ks_statistic(a, a), 0.0);
  EXPECT_EQ(ks_statistic({0.0, 0.1}, {1.0, 2.0}), 1.0);
  // c(0.01) = sqrt(−ln(0.005)/2) ≈ 1.6276.
  EXPECT_NEAR(ks_critical(100, 100, 0.01), 1.6276 * std::sqrt(0.02), 1e-4);
}
