#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace tcbm {

struct RunOptions {
  /// Forces the single-threaded path.
  bool serial = false;
  /// 0 means std::thread::hardware_concurrency().
  std::size_t workers = 0;
};

std::size_t resolve_workers(const RunOptions& options);

/// Evaluates f(i) for i in [0, n) and returns the results in index order.
/// Each index is computed exactly once by one worker, so the result does not
/// depend on the worker count. The first exception thrown is rethrown.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, F&& f, const RunOptions& options = {}) {
  std::vector<T> out(n);
  const std::size_t workers = std::min(resolve_workers(options), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        out[i] = f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample std / sqrt(n)
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double dt = 0.0;
};

/// Mean and standard error in a fixed summation order.
Estimate summarize(std::span<const double> samples, std::uint64_t seed = 0, double dt = 0.0);

/// Path functional: (master seed, path index) -> sample.
using PathFunctional = std::function<double(std::uint64_t, std::uint64_t)>;

Estimate run_estimate(const PathFunctional& f, std::size_t n_paths, std::uint64_t seed,
                      double dt = 0.0, const RunOptions& options = {});

struct ConvergenceLevel {
  double dt = 0.0;
  double rms = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

struct ConvergenceTable {
  std::vector<ConvergenceLevel> levels;
  double slope = 0.0;
  double intercept = 0.0;
  /// All rms <= 1e-12; no slope is fitted.
  bool exact = false;

  bool nonincreasing() const;
};

/// Least-squares fit of log(rms) against log(dt); sets `exact` instead when
/// every level is at round-off. Throws InvalidConfig unless dt is strictly
/// decreasing.
void fit_convergence(ConvergenceTable& table);

/// Root mean square and max of |x|.
ConvergenceLevel rms_level(std::span<const double> abs_diffs, double dt);

struct MartingaleTriple {
  double s = 0.0;
  double t = 0.0;
  std::string g;
  double mean = 0.0;
  double std_error = 0.0;
  bool pass = false;
};

struct MartingaleReport {
  std::vector<MartingaleTriple> triples;
  bool pass = true;
};

using PastFunctional = std::function<double(double m_s, double lambda_s)>;

struct NamedFunctional {
  std::string name;
  PastFunctional g;
};

/// g ≡ 1, sign(M_s), clip(M_s, -1, 1).
std::vector<NamedFunctional> default_past_functionals();

/// `m[i][j]` and `lambda[i][j]` are path i at time times[j]. For every pair
/// (s, t) and functional g, passes when |mean((M_t − M_s)·g)| <= 3·stderr.
/// s = 0 with g ≡ 1 tests the mean of M_t itself.
MartingaleReport martingale_test(std::span<const double> times,
                                 const std::vector<std::vector<double>>& m,
                                 const std::vector<std::vector<double>>& lambda,
                                 std::span<const std::pair<double, double>> pairs,
                                 const std::vector<NamedFunctional>& functionals);

/// Two-sample Kolmogorov–Smirnov statistic sup |F_a − F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);
/// Asymptotic critical value at level alpha.
double ks_critical(std::size_t n, std::size_t m, double alpha);

}  // namespace tcbm
