#include "tcbm/noise.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "tcbm/error.hpp"

namespace tcbm {

namespace {

constexpr std::size_t npos = static_cast<std::size_t>(-1);

std::string fmt_time(double r) {
  std::ostringstream os;
  os << std::setprecision(17) << r;
  return os.str();
}

}  // namespace

BrownianPath::BrownianPath(std::uint64_t seed, std::uint64_t path_index,
                           rng::StreamId id, double range_end)
    : range_end_(range_end) {
  normal_ = [stream = rng::Stream(seed, path_index, id),
             dist = std::normal_distribution<double>()]() mutable {
    return dist(stream);
  };
}

BrownianPath::BrownianPath(NormalSource source, double range_end)
    : normal_(std::move(source)), range_end_(range_end) {}

std::size_t BrownianPath::find(double r) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), r - kTimeTolerance);
  if (it != times_.end() && std::abs(*it - r) <= kTimeTolerance) {
    return static_cast<std::size_t>(it - times_.begin());
  }
  return npos;
}

bool BrownianPath::contains(double r) const { return find(r) != npos; }

double BrownianPath::at(double r) const {
  const std::size_t i = find(r);
  if (i == npos) {
    throw Error(ErrorCode::GridNotRefined, "W not sampled at r = " + fmt_time(r));
  }
  return values_[i];
}

void BrownianPath::refine(std::span<const double> times) {
  std::vector<double> fresh(times.begin(), times.end());
  std::sort(fresh.begin(), fresh.end());
  for (double r : fresh) {
    if (!(r >= -kTimeTolerance && r <= range_end_ + kTimeTolerance)) {
      throw Error(ErrorCode::OutOfDomain, "r = " + fmt_time(r) + " outside [0, R]");
    }
  }

  std::vector<double> out_t;
  std::vector<double> out_v;
  out_t.reserve(times_.size() + fresh.size());
  out_v.reserve(times_.size() + fresh.size());

  std::size_t old = 0;
  for (double r : fresh) {
    while (old < times_.size() && times_[old] <= r + kTimeTolerance) {
      out_t.push_back(times_[old]);
      out_v.push_back(values_[old]);
      ++old;
    }
    if (std::abs(out_t.back() - r) <= kTimeTolerance) continue;
    // Left neighbour is the latest point emitted (old or new), right neighbour
    // the next old point; by the Markov property that is the full condition.
    const double a = out_t.back();
    const double wa = out_v.back();
    const double z = normal_();
    double w = 0.0;
    if (old < times_.size()) {
      const double b = times_[old];
      const double wb = values_[old];
      const double mean = wa + (r - a) / (b - a) * (wb - wa);
      const double var = (r - a) * (b - r) / (b - a);
      w = mean + std::sqrt(var) * z;
    } else {
      w = wa + std::sqrt(r - a) * z;
    }
    out_t.push_back(r);
    out_v.push_back(w);
  }
  for (; old < times_.size(); ++old) {
    out_t.push_back(times_[old]);
    out_v.push_back(values_[old]);
  }
  times_ = std::move(out_t);
  values_ = std::move(out_v);
}

BrownianPath sample_brownian(std::span<const double> times, std::uint64_t seed,
                             std::uint64_t path_index) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double prev = i == 0 ? 0.0 : times[i - 1];
    if (!(times[i] > prev)) {
      throw Error(ErrorCode::UnsortedTimes,
                  "times must be strictly increasing and positive at index " +
                      std::to_string(i));
    }
  }
  BrownianPath w(seed, path_index);
  w.refine(times);
  return w;
}

std::vector<double> make_t_grid(const TimeChangePath& lambda, double t_end, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidConfig, "dt must be positive");
  if (!(t_end >= 0.0 && t_end <= lambda.domain_end() + kTimeTolerance)) {
    throw Error(ErrorCode::OutOfDomain, "t_end outside [0, T]");
  }
  std::vector<double> grid;
  const auto steps = static_cast<std::size_t>(std::floor(t_end / dt + 1e-9));
  grid.reserve(steps + 2 + lambda.jumps().size());
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (t < t_end - kTimeTolerance) grid.push_back(t);
  }
  grid.push_back(t_end);

  for (const Jump& j : lambda.jumps()) {
    if (j.time > t_end + kTimeTolerance) break;
    auto it = std::lower_bound(grid.begin(), grid.end(), j.time - kTimeTolerance);
    if (it != grid.end() && std::abs(*it - j.time) <= kTimeTolerance) {
      *it = j.time;
    } else {
      grid.insert(it, j.time);
    }
  }
  return grid;
}

TimeChangedPath time_changed_bm(BrownianPath& w, const TimeChangePath& lambda,
                                std::span<const double> t_grid) {
  for (std::size_t i = 1; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > t_grid[i - 1])) {
      throw Error(ErrorCode::UnsortedTimes, "t-grid must be strictly increasing");
    }
  }
  std::vector<double> grid(t_grid.begin(), t_grid.end());
  if (!grid.empty()) {
    const double last = grid.back();
    for (const Jump& j : lambda.jumps()) {
      if (j.time > last + kTimeTolerance) break;
      auto it = std::lower_bound(grid.begin(), grid.end(), j.time - kTimeTolerance);
      if (it != grid.end() && std::abs(*it - j.time) <= kTimeTolerance) {
        *it = j.time;
      } else {
        grid.insert(it, j.time);
      }
    }
  }

  TimeChangedPath out;
  out.lambda.t = grid;
  out.lambda.value.reserve(grid.size());
  out.lambda.left.reserve(grid.size());
  std::vector<double> images;
  images.reserve(2 * grid.size());
  for (double t : grid) {
    const double v = lambda.eval(t);
    const double l = lambda.left_limit(t);
    out.lambda.value.push_back(v);
    out.lambda.left.push_back(l);
    images.push_back(v);
    if (l != v) images.push_back(l);
  }
  w.refine(images);

  out.m.t = grid;
  out.m.value.reserve(grid.size());
  out.m.left.reserve(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double mv = w.at(out.lambda.value[k]);
    out.m.value.push_back(mv);
    out.m.left.push_back(out.lambda.left[k] == out.lambda.value[k]
                             ? mv
                             : w.at(out.lambda.left[k]));
  }
  return out;
}

void write_csv(std::ostream& out, const BrownianPath& w) {
  out << "r,W\n" << std::setprecision(17);
  for (std::size_t i = 0; i < w.times().size(); ++i) {
    out << w.times()[i] << ',' << w.values()[i] << '\n';
  }
}

void write_csv(std::ostream& out, const TimeChangedPath& m) {
  out << "t,M,M_left\n" << std::setprecision(17);
  for (std::size_t i = 0; i < m.m.size(); ++i) {
    out << m.m.t[i] << ',' << m.m.value[i] << ',' << m.m.left[i] << '\n';
  }
}

}  // namespace tcbm
