#include "tcbm/timechange.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "tcbm/error.hpp"
#include "tcbm/rng.hpp"

namespace tcbm {

namespace {

std::string describe(double t, double v) {
  std::ostringstream os;
  os << std::setprecision(17) << "(" << t << ", " << v << ")";
  return os.str();
}

// Drops exact duplicates and collapses runs of knots sharing a time to their
// first and last entries, so each time carries at most a (left, right) pair.
std::vector<Knot> normalize(const std::vector<Knot>& knots) {
  std::vector<Knot> out;
  out.reserve(knots.size());
  for (std::size_t i = 0; i < knots.size();) {
    std::size_t j = i;
    while (j + 1 < knots.size() && knots[j + 1].t == knots[i].t) ++j;
    out.push_back(knots[i]);
    if (knots[j].v != knots[i].v) out.push_back(knots[j]);
    i = j + 1;
  }
  return out;
}

}  // namespace

TimeChangePath TimeChangePath::from_knots(std::vector<Knot> knots,
                                          double domain_end, double range_end,
                                          std::size_t max_jumps,
                                          double eps_min) {
  if (knots.empty()) throw Error(ErrorCode::InvalidPath, "no knots");
  if (!(domain_end > 0.0) || !(range_end > 0.0)) {
    throw Error(ErrorCode::InvalidPath, "horizons must be positive");
  }
  for (const Knot& k : knots) {
    if (!std::isfinite(k.t) || !std::isfinite(k.v)) {
      throw Error(ErrorCode::InvalidPath, "non-finite knot");
    }
  }
  if (knots.front().t != 0.0 || knots.front().v != 0.0) {
    throw Error(ErrorCode::NonzeroOrigin,
                "path must start at (0, 0), got " +
                    describe(knots.front().t, knots.front().v));
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (knots[i].t < knots[i - 1].t || knots[i].v < knots[i - 1].v) {
      throw Error(ErrorCode::NonMonotone,
                  "knot " + describe(knots[i].t, knots[i].v) + " after " +
                      describe(knots[i - 1].t, knots[i - 1].v));
    }
  }
  if (std::abs(knots.back().t - domain_end) > kTimeTolerance) {
    throw Error(ErrorCode::InvalidPath,
                "last knot must sit at the domain end");
  }
  knots.back().t = domain_end;

  TimeChangePath path;
  path.domain_end_ = domain_end;
  path.range_end_ = range_end;
  path.knots_ = normalize(knots);

  if (path.knots_.back().v > range_end * (1.0 + kTimeTolerance)) {
    throw Error(ErrorCode::RangeExceeded,
                "terminal value " + describe(domain_end, path.knots_.back().v) +
                    " exceeds range end");
  }

  double min_slope = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < path.knots_.size(); ++i) {
    const Knot& a = path.knots_[i - 1];
    const Knot& b = path.knots_[i];
    if (a.t == b.t) {
      path.jumps_.push_back({a.t, a.v, b.v});
    } else {
      min_slope = std::min(min_slope, (b.v - a.v) / (b.t - a.t));
    }
  }
  if (path.jumps_.size() > max_jumps) {
    throw Error(ErrorCode::TooManyJumps,
                std::to_string(path.jumps_.size()) + " jumps exceed cap " +
                    std::to_string(max_jumps));
  }
  path.min_slope_ = std::isfinite(min_slope) ? min_slope : 0.0;
  path.strictly_increasing_ = std::isfinite(min_slope) && min_slope >= eps_min;
  return path;
}

double TimeChangePath::check_domain(double t) const {
  const double tol = kTimeTolerance * std::max(1.0, domain_end_);
  if (!(t >= -tol && t <= domain_end_ + tol)) {
    throw Error(ErrorCode::OutOfDomain,
                "t = " + describe(t, 0.0) + " outside [0, domain_end]");
  }
  return std::clamp(t, 0.0, domain_end_);
}

double TimeChangePath::eval(double t) const {
  t = check_domain(t);
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                             [](double x, const Knot& k) { return x < k.t; });
  const auto idx = static_cast<std::size_t>(it - knots_.begin()) - 1;
  if (idx + 1 == knots_.size()) return knots_[idx].v;
  const Knot& a = knots_[idx];
  const Knot& b = knots_[idx + 1];
  return a.v + (t - a.t) * (b.v - a.v) / (b.t - a.t);
}

double TimeChangePath::left_limit(double t) const {
  t = check_domain(t);
  if (t == 0.0) return 0.0;
  auto it = std::lower_bound(knots_.begin(), knots_.end(), t,
                             [](const Knot& k, double x) { return k.t < x; });
  const auto idx = static_cast<std::size_t>(it - knots_.begin());
  if (idx < knots_.size() && knots_[idx].t == t) return knots_[idx].v;
  const Knot& a = knots_[idx - 1];
  const Knot& b = knots_[idx];
  return a.v + (t - a.t) * (b.v - a.v) / (b.t - a.t);
}

double TimeChangePath::jump_total(double t) const {
  double total = 0.0;
  for (const Jump& j : jumps_) {
    if (j.time <= t) total += j.right - j.left;
  }
  return total;
}

bool TimeChangePath::is_jump_time(double t) const {
  return std::any_of(jumps_.begin(), jumps_.end(),
                     [t](const Jump& j) { return j.time == t; });
}

DeterministicSpec affine_spec(double slope, std::vector<StepJump> jumps,
                              double domain_end, double range_end) {
  std::sort(jumps.begin(), jumps.end(),
            [](const StepJump& a, const StepJump& b) { return a.time < b.time; });
  DeterministicSpec spec;
  spec.domain_end = domain_end;
  spec.range_end = range_end;
  spec.knots.push_back({0.0, 0.0});
  double cumulative = 0.0;
  for (const StepJump& j : jumps) {
    const double base = slope * j.time + cumulative;
    spec.knots.push_back({j.time, base});
    cumulative += j.size;
    spec.knots.push_back({j.time, base + j.size});
  }
  if (spec.knots.back().t != domain_end) {
    spec.knots.push_back({domain_end, slope * domain_end + cumulative});
  }
  return spec;
}

TimeChangePath build_deterministic(const DeterministicSpec& spec) {
  for (std::size_t i = 1; i < spec.knots.size() && spec.knots[i].t == 0.0; ++i) {
    if (spec.knots[i].v != spec.knots[0].v) {
      throw Error(ErrorCode::NonzeroOrigin, "λ jumps at the origin");
    }
  }
  return TimeChangePath::from_knots(spec.knots, spec.domain_end,
                                    spec.range_end, spec.max_jumps);
}

void validate(const TimeChangeConfig& c) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::InvalidConfig, what);
  };
  if (!(c.horizon > 0.0)) fail("horizon must be positive");
  if (!(c.market_horizon > 0.0)) fail("market_horizon must be positive");
  if (!(c.drift_slope >= 0.0)) fail("drift_slope must be >= 0");
  if (c.drift_slope * c.horizon > c.market_horizon) {
    fail("drift alone exceeds market_horizon");
  }
  if (!(c.eps_min > 0.0)) fail("eps_min must be positive");
  if (c.kind == TimeChangeKind::deterministic) {
    for (const StepJump& j : c.deterministic_jumps) {
      if (!(j.time > 0.0 && j.time <= c.horizon)) fail("jump time outside (0, T]");
      if (!(j.size > 0.0)) fail("jump sizes must be positive");
    }
    if (c.deterministic_jumps.size() > kDefaultMaxJumps) fail("too many jumps");
    return;
  }
  const JumpLaw& law = c.jumps;
  if (law.max_count > kDefaultMaxJumps) fail("max jump count above cap 32");
  std::size_t worst_count = 0;
  if (law.count == JumpCountLaw::fixed) {
    if (law.fixed_count > law.max_count) fail("fixed jump count above max");
    worst_count = law.fixed_count;
  } else {
    if (!(law.poisson_rate >= 0.0)) fail("poisson rate must be >= 0");
    worst_count = law.poisson_rate > 0.0 ? law.max_count : 0;
  }
  if (worst_count > 0) {
    if (law.size == JumpSizeLaw::exponential && !(law.size_mean > 0.0)) {
      fail("exponential jump mean must be positive");
    }
    if (law.size == JumpSizeLaw::uniform &&
        !(law.size_low > 0.0 && law.size_high >= law.size_low)) {
      fail("uniform jump sizes need 0 < low <= high");
    }
  }
  if (!(c.min_separation >= 0.0)) fail("min_separation must be >= 0");
  if (worst_count > 1 &&
      static_cast<double>(worst_count - 1) * c.min_separation >= c.horizon) {
    fail("min_separation infeasible for the jump count");
  }
}

double expected_terminal(const TimeChangeConfig& c) {
  double base = c.drift_slope * c.horizon;
  if (c.kind == TimeChangeKind::deterministic) {
    for (const StepJump& j : c.deterministic_jumps) base += j.size;
    return base;
  }
  const JumpLaw& law = c.jumps;
  double mean_count = 0.0;
  if (law.count == JumpCountLaw::fixed) {
    mean_count = static_cast<double>(law.fixed_count);
  } else if (law.poisson_rate > 0.0) {
    // E[min(N, max_count)] for N ~ Poisson(rate).
    double pk = std::exp(-law.poisson_rate);
    double below = 0.0;
    for (std::size_t k = 0; k <= law.max_count; ++k) {
      if (k > 0) pk *= law.poisson_rate / static_cast<double>(k);
      mean_count += static_cast<double>(k) * pk;
      below += pk;
    }
    mean_count += static_cast<double>(law.max_count) * (1.0 - below);
  }
  const double mean_size = law.size == JumpSizeLaw::exponential
                               ? law.size_mean
                               : 0.5 * (law.size_low + law.size_high);
  return base + mean_count * mean_size;
}

TimeChangePath sample_timechange(const TimeChangeConfig& c,
                                 std::uint64_t master_seed,
                                 std::uint64_t path_index) {
  validate(c);
  if (c.kind == TimeChangeKind::deterministic) {
    return build_deterministic(affine_spec(c.drift_slope, c.deterministic_jumps,
                                           c.horizon, c.market_horizon));
  }
  rng::Stream stream(master_seed, path_index, rng::StreamId::time_change);
  const JumpLaw& law = c.jumps;
  std::uniform_real_distribution<double> uniform_time(0.0, c.horizon);

  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::size_t count = law.fixed_count;
    if (law.count == JumpCountLaw::poisson) {
      count = 0;
      if (law.poisson_rate > 0.0) {
        std::poisson_distribution<std::size_t> poisson(law.poisson_rate);
        count = std::min(poisson(stream), law.max_count);
      }
    }

    std::vector<double> times(count);
    bool separated = false;
    for (int draw = 0; draw < kMaxAttempts && !separated; ++draw) {
      for (double& t : times) {
        do {
          t = uniform_time(stream);
        } while (t <= 0.0);
      }
      std::sort(times.begin(), times.end());
      separated = true;
      for (std::size_t i = 1; i < times.size(); ++i) {
        if (times[i] - times[i - 1] < c.min_separation || times[i] == times[i - 1]) {
          separated = false;
          break;
        }
      }
    }
    if (!separated) {
      throw Error(ErrorCode::InvalidConfig,
                  "could not place jumps with the requested separation");
    }

    std::vector<StepJump> jumps;
    jumps.reserve(count);
    for (double t : times) {
      double size = 0.0;
      if (law.size == JumpSizeLaw::exponential) {
        std::exponential_distribution<double> exponential(1.0 / law.size_mean);
        do {
          size = exponential(stream);
        } while (size <= 0.0);
      } else {
        std::uniform_real_distribution<double> u(law.size_low, law.size_high);
        size = u(stream);
      }
      jumps.push_back({t, size});
    }

    DeterministicSpec spec =
        affine_spec(c.drift_slope, jumps, c.horizon, c.market_horizon);
    if (spec.knots.back().v > c.market_horizon) continue;
    return TimeChangePath::from_knots(std::move(spec.knots), c.horizon,
                                      c.market_horizon, law.max_count, c.eps_min);
  }
  throw Error(ErrorCode::InvalidConfig,
              "market_horizon too small: Λ_T exceeded it on every attempt");
}

TimeChangePath generalized_inverse(const TimeChangePath& path) {
  const auto knots = path.knots();
  if (knots.empty() || knots.front().t != 0.0 || knots.front().v != 0.0) {
    throw Error(ErrorCode::InvalidPath, "not a time-change path");
  }
  std::vector<Knot> swapped;
  swapped.reserve(knots.size() + 1);
  for (const Knot& k : knots) swapped.push_back({k.v, k.t});
  if (path.terminal() < path.range_end()) {
    swapped.push_back({path.range_end(), path.domain_end()});
  } else {
    swapped.back().t = path.range_end();
  }
  return TimeChangePath::from_knots(std::move(swapped), path.range_end(),
                                    path.domain_end(),
                                    std::numeric_limits<std::size_t>::max());
}

void write_csv(std::ostream& out, const TimeChangePath& path) {
  out << "t,value,is_jump_left,is_jump_right\n";
  out << std::setprecision(17);
  const auto knots = path.knots();
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const bool jump_left = i + 1 < knots.size() && knots[i + 1].t == knots[i].t;
    const bool jump_right = i > 0 && knots[i - 1].t == knots[i].t;
    out << knots[i].t << ',' << knots[i].v << ',' << (jump_left ? 1 : 0) << ','
        << (jump_right ? 1 : 0) << '\n';
  }
}

}  // namespace tcbm
