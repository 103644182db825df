#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "tcbm/rng.hpp"
#include "tcbm/timechange.hpp"

namespace tcbm {

/// Brownian motion on [0, range_end], stored only at the times that have been
/// requested. New times are filled in from the bridge law given the stored
/// neighbours; times past the last stored point get free Gaussian increments.
/// Stored values are never modified.
class BrownianPath {
 public:
  using NormalSource = std::function<double()>;

  /// Draws from the Philox stream (seed, path_index, id).
  BrownianPath(std::uint64_t seed, std::uint64_t path_index,
               rng::StreamId id = rng::StreamId::brownian,
               double range_end = std::numeric_limits<double>::infinity());
  /// Draws standard normals from `source`; used to force specific draws.
  explicit BrownianPath(NormalSource source,
                        double range_end = std::numeric_limits<double>::infinity());

  /// Inserts any of `times` not already stored (within kTimeTolerance).
  /// Order of `times` does not matter. Throws OutOfDomain.
  void refine(std::span<const double> times);
  void refine(std::initializer_list<double> times) {
    refine(std::span<const double>(times.begin(), times.size()));
  }

  /// Value at a stored time; throws GridNotRefined otherwise.
  double at(double r) const;
  bool contains(double r) const;

  std::span<const double> times() const { return times_; }
  std::span<const double> values() const { return values_; }
  double range_end() const { return range_end_; }

 private:
  std::size_t find(double r) const;  // index or npos

  NormalSource normal_;
  double range_end_;
  std::vector<double> times_{0.0};
  std::vector<double> values_{0.0};
};

/// Samples W at strictly increasing times > 0. Throws UnsortedTimes.
BrownianPath sample_brownian(std::span<const double> times, std::uint64_t seed,
                             std::uint64_t path_index = 0);

/// Càdlàg path sampled on a grid; `left` differs from `value` only at jumps.
struct GridPath {
  std::vector<double> t;
  std::vector<double> value;
  std::vector<double> left;

  std::size_t size() const { return t.size(); }
};

/// Λ and M = W∘Λ on a shared t-grid that contains every jump time of Λ in range.
struct TimeChangedPath {
  GridPath lambda;
  GridPath m;

  std::span<const double> t() const { return lambda.t; }
};

/// {kΔ} ∪ {t_end} ∪ {jump times <= t_end}, sorted; a uniform point within
/// kTimeTolerance of a jump time is replaced by the jump time.
std::vector<double> make_t_grid(const TimeChangePath& lambda, double t_end, double dt);

/// Refines W at Λ_t and Λ_{t-} for every grid node and reads off M.
/// Jump times of Λ up to the last grid node are added to the grid.
TimeChangedPath time_changed_bm(BrownianPath& w, const TimeChangePath& lambda,
                                std::span<const double> t_grid);

/// Columns r,W.
void write_csv(std::ostream& out, const BrownianPath& w);
/// Columns t,M,M_left.
void write_csv(std::ostream& out, const TimeChangedPath& m);

}  // namespace tcbm
