#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace tcbm {

/// Default lower bound on the continuous slope of a strictly increasing path.
inline constexpr double kDefaultEpsMin = 1e-3;
inline constexpr std::size_t kDefaultMaxJumps = 32;
/// Two times closer than this are treated as the same grid point.
inline constexpr double kTimeTolerance = 1e-12;

struct Knot {
  double t = 0.0;
  double v = 0.0;
  bool operator==(const Knot&) const = default;
};

struct Jump {
  double time = 0.0;
  double left = 0.0;   // value just before the jump
  double right = 0.0;  // value at the jump (right-continuous)
};

/// Increasing càdlàg path on [0, domain_end] with values in [0, range_end],
/// piecewise linear between knots with finitely many jumps.
///
/// Knots are ordered by time; two consecutive knots sharing a time encode a
/// jump (left value first, right value second). Each maximal run of knots
/// without a repeated time is one continuous segment, so an affine segment is
/// two knots and a tabulated monotone segment is any number of them. Jump
/// triples are stored alongside so left limits at jump times are read, never
/// estimated.
///
/// The same type holds a time change and its generalized inverse; the inverse
/// may jump at 0 (its left value there is 0) when the time change starts flat.
class TimeChangePath {
 public:
  /// Validates and builds a path. Throws NonMonotone, NonzeroOrigin,
  /// TooManyJumps, RangeExceeded or InvalidPath.
  static TimeChangePath from_knots(std::vector<Knot> knots, double domain_end,
                                   double range_end,
                                   std::size_t max_jumps = kDefaultMaxJumps,
                                   double eps_min = kDefaultEpsMin);

  double domain_end() const { return domain_end_; }
  double range_end() const { return range_end_; }

  /// Right-continuous value. Throws OutOfDomain outside [0, domain_end].
  double eval(double t) const;
  /// Left limit; left_limit(0) == 0 by convention.
  double left_limit(double t) const;
  double terminal() const { return knots_.back().v; }

  std::span<const Knot> knots() const { return knots_; }
  std::span<const Jump> jumps() const { return jumps_; }
  /// Jump sizes summed over jump times <= t.
  double jump_total(double t) const;
  bool is_jump_time(double t) const;

  /// True when every continuous piece has slope >= eps_min.
  bool strictly_increasing() const { return strictly_increasing_; }
  double min_slope() const { return min_slope_; }

  bool operator==(const TimeChangePath& other) const {
    return domain_end_ == other.domain_end_ &&
           range_end_ == other.range_end_ && knots_ == other.knots_;
  }

 private:
  TimeChangePath() = default;
  double check_domain(double t) const;

  double domain_end_ = 0.0;
  double range_end_ = 0.0;
  std::vector<Knot> knots_;
  std::vector<Jump> jumps_;
  bool strictly_increasing_ = false;
  double min_slope_ = 0.0;
};

struct StepJump {
  double time = 0.0;
  double size = 0.0;
};

/// Piecewise description of a deterministic time change λ.
struct DeterministicSpec {
  double domain_end = 1.0;
  double range_end = 1.0;
  std::vector<Knot> knots;
  std::size_t max_jumps = kDefaultMaxJumps;
};

/// λ_t = slope * t + sum of step jumps, on [0, domain_end].
DeterministicSpec affine_spec(double slope, std::vector<StepJump> jumps,
                              double domain_end, double range_end);

/// Validates a deterministic λ: nondecreasing, λ_0 = 0 with no jump at the
/// origin, at most max_jumps jumps, λ_T <= range_end.
TimeChangePath build_deterministic(const DeterministicSpec& spec);

enum class TimeChangeKind { deterministic, drift_plus_jumps };
enum class JumpCountLaw { fixed, poisson };
enum class JumpSizeLaw { exponential, uniform };

struct JumpLaw {
  JumpCountLaw count = JumpCountLaw::fixed;
  std::size_t fixed_count = 0;
  double poisson_rate = 0.0;  // expected number of jumps on [0, T]
  std::size_t max_count = kDefaultMaxJumps;
  JumpSizeLaw size = JumpSizeLaw::exponential;
  double size_mean = 0.25;  // exponential
  double size_low = 0.0;    // uniform
  double size_high = 0.0;
};

struct TimeChangeConfig {
  TimeChangeKind kind = TimeChangeKind::drift_plus_jumps;
  double horizon = 1.0;         // T
  double market_horizon = 8.0;  // R
  double drift_slope = 1.0;
  JumpLaw jumps;
  /// Only for kind == deterministic.
  std::vector<StepJump> deterministic_jumps;
  double min_separation = 0.0;
  double eps_min = kDefaultEpsMin;
};

/// Throws InvalidConfig when the configuration cannot produce a valid path.
void validate(const TimeChangeConfig& config);

/// E[Λ_T] implied by the sampler parameters.
double expected_terminal(const TimeChangeConfig& config);

/// Deterministic in (config, master_seed, path_index); draws only from the
/// time-change stream. Paths with Λ_T > R are redrawn.
TimeChangePath sample_timechange(const TimeChangeConfig& config,
                                 std::uint64_t master_seed,
                                 std::uint64_t path_index = 0);

/// Γ_r = inf{t : Λ_t > r} for r < Λ_T and Γ_r = T on [Λ_T, R].
/// Continuous pieces invert to continuous pieces, jumps become flat pieces
/// and flat pieces become jumps.
TimeChangePath generalized_inverse(const TimeChangePath& path);

/// Columns t,value,is_jump_left,is_jump_right; one row per knot.
void write_csv(std::ostream& out, const TimeChangePath& path);

}  // namespace tcbm
