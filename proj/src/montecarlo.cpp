#include "tcbm/montecarlo.hpp"

#include <cmath>
#include <limits>

#include "tcbm/error.hpp"

namespace tcbm {

std::size_t resolve_workers(const RunOptions& options) {
  if (options.serial) return 1;
  if (options.workers > 0) return options.workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

Estimate summarize(std::span<const double> samples, std::uint64_t seed, double dt) {
  Estimate e;
  e.n = samples.size();
  e.seed = seed;
  e.dt = dt;
  if (samples.empty()) return e;
  double sum = 0.0;
  for (double x : samples) sum += x;
  e.mean = sum / static_cast<double>(e.n);
  if (e.n < 2) return e;
  double ss = 0.0;
  for (double x : samples) ss += (x - e.mean) * (x - e.mean);
  e.std_error = std::sqrt(ss / static_cast<double>(e.n - 1) / static_cast<double>(e.n));
  return e;
}

Estimate run_estimate(const PathFunctional& f, std::size_t n_paths, std::uint64_t seed,
                      double dt, const RunOptions& options) {
  const auto samples = parallel_map<double>(
      n_paths, [&](std::size_t i) { return f(seed, i); }, options);
  return summarize(samples, seed, dt);
}

bool ConvergenceTable::nonincreasing() const {
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (levels[i].rms > levels[i - 1].rms) return false;
  }
  return true;
}

void fit_convergence(ConvergenceTable& table) {
  const auto& lv = table.levels;
  for (std::size_t i = 1; i < lv.size(); ++i) {
    if (!(lv[i].dt < lv[i - 1].dt)) {
      throw Error(ErrorCode::InvalidConfig, "convergence levels must refine dt");
    }
  }
  table.exact = std::all_of(lv.begin(), lv.end(),
                            [](const ConvergenceLevel& l) { return l.rms <= 1e-12; });
  table.slope = 0.0;
  table.intercept = 0.0;
  if (table.exact || lv.size() < 2) return;

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(lv.size());
  for (const auto& l : lv) {
    const double x = std::log(l.dt);
    const double y = std::log(l.rms);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  table.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  table.intercept = (sy - table.slope * sx) / n;
}

ConvergenceLevel rms_level(std::span<const double> abs_diffs, double dt) {
  ConvergenceLevel level;
  level.dt = dt;
  level.n = abs_diffs.size();
  double ss = 0.0;
  for (double d : abs_diffs) {
    ss += d * d;
    level.max = std::max(level.max, std::abs(d));
  }
  level.rms = abs_diffs.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(abs_diffs.size()));
  return level;
}

std::vector<NamedFunctional> default_past_functionals() {
  return {
      {"one", [](double, double) { return 1.0; }},
      {"sign", [](double m, double) { return m > 0.0 ? 1.0 : (m < 0.0 ? -1.0 : 0.0); }},
      {"clip", [](double m, double) { return std::clamp(m, -1.0, 1.0); }},
  };
}

MartingaleReport martingale_test(std::span<const double> times,
                                 const std::vector<std::vector<double>>& m,
                                 const std::vector<std::vector<double>>& lambda,
                                 std::span<const std::pair<double, double>> pairs,
                                 const std::vector<NamedFunctional>& functionals) {
  auto index_of = [&](double x) {
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (std::abs(times[j] - x) <= 1e-12) return j;
    }
    throw Error(ErrorCode::GridNotRefined, "martingale test time not on the grid");
  };
  MartingaleReport report;
  std::vector<double> samples(m.size());
  for (const auto& [s, t] : pairs) {
    const std::size_t js = index_of(s);
    const std::size_t jt = index_of(t);
    for (const auto& g : functionals) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        samples[i] = (m[i][jt] - m[i][js]) * g.g(m[i][js], lambda[i][js]);
      }
      const Estimate e = summarize(samples);
      MartingaleTriple triple{s, t, g.name, e.mean, e.std_error,
                              std::abs(e.mean) <= 3.0 * e.std_error};
      report.pass = report.pass && triple.pass;
      report.triples.push_back(std::move(triple));
    }
  }
  return report;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_critical(std::size_t n, std::size_t m, double alpha) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  return c * std::sqrt((nn + mm) / (nn * mm));
}

}  // namespace tcbm
