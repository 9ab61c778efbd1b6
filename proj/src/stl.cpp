#include "trajmode/stl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trajmode/error.hpp"

namespace trajmode {

namespace {

int smallest_odd_at_least(double v) {
  auto n = static_cast<int>(std::ceil(v));
  if (n % 2 == 0) ++n;
  return n;
}

void check_span(int span, const char* what) {
  if (span < 3 || span % 2 == 0) throw Error(ErrorKind::Config, std::string(what) + " must be odd and >= 3");
}

}  // namespace

StlConfig StlConfig::for_period(int period) {
  StlConfig cfg;
  cfg.period = period;
  cfg.seasonal_span = 7;
  cfg.trend_span = smallest_odd_at_least(1.5 * period / (1.0 - 1.5 / cfg.seasonal_span));
  cfg.lowpass_span = std::max(3, smallest_odd_at_least(period));
  return cfg;
}

void validate(const StlConfig& cfg) {
  if (cfg.period < 2) throw Error(ErrorKind::Config, "stl period must be >= 2");
  if (cfg.inner_iterations < 1) throw Error(ErrorKind::Config, "stl inner_iterations must be >= 1");
  check_span(cfg.seasonal_span, "stl seasonal_span");
  check_span(cfg.trend_span, "stl trend_span");
  check_span(cfg.lowpass_span, "stl lowpass_span");
}

bool loess_estimate(const Series& series, int span, double position, Eigen::Index left, Eigen::Index right,
                    double& estimate) {
  const Eigen::Index n = series.size();
  const double range = static_cast<double>(n) - 1.0;
  double h = std::max(position - static_cast<double>(left), static_cast<double>(right) - position);
  if (span > n) h += static_cast<double>((span - n) / 2);
  const double h_hi = 0.999 * h;
  const double h_lo = 0.001 * h;

  const Eigen::Index width = right - left + 1;
  Eigen::VectorXd w(width);
  for (Eigen::Index j = 0; j < width; ++j) {
    const double r = std::abs(static_cast<double>(left + j) - position);
    if (r <= h_hi) {
      if (r <= h_lo) {
        w[j] = 1.0;
      } else {
        const double u = r / h;
        const double t = 1.0 - u * u * u;
        w[j] = t * t * t;
      }
    } else {
      w[j] = 0.0;
    }
  }
  const double total = w.sum();
  if (!(total > 0.0)) return false;
  w /= total;

  if (h > 0.0) {
    // Degree-1 fit folded into the weights.
    const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(width, static_cast<double>(left), static_cast<double>(right));
    const double mean_x = w.dot(x);
    const double c = w.dot((x.array() - mean_x).square().matrix());
    if (std::sqrt(c) > 0.001 * range) {
      const double slope = (position - mean_x) / c;
      w.array() *= slope * (x.array() - mean_x) + 1.0;
    }
  }
  estimate = w.dot(series.segment(left, width));
  return true;
}

Series loess_smooth(const Series& series, int span) {
  const Eigen::Index n = series.size();
  if (n < 2) return series;
  if (span < 1) throw Error(ErrorKind::Precondition, "loess span must be positive");
  const Eigen::Index q = std::min<Eigen::Index>(span, n);
  Series out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index left = std::clamp<Eigen::Index>(i - (q - 1) / 2, 0, n - q);
    const Eigen::Index right = left + q - 1;
    double value = series[i];
    if (!loess_estimate(series, span, static_cast<double>(i), left, right, value)) value = series[i];
    out[i] = value;
  }
  return out;
}

Series moving_average(const Series& series, int window) {
  const Eigen::Index n = series.size();
  if (window < 1 || window > n) throw Error(ErrorKind::Precondition, "moving average window out of range");
  Series out(n - window + 1);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = series.segment(i, window).mean();
  return out;
}

namespace {

// Smooths every cycle-subseries and extends each by one cycle on both ends.
// Result has size n + 2 * period; entry v + period aligns with input v.
Series cycle_subseries_smooth(const Series& detrended, int period, int span) {
  const Eigen::Index n = detrended.size();
  Series extended(n + 2 * period);
  for (int phase = 0; phase < period; ++phase) {
    const Eigen::Index m = (n - phase + period - 1) / period;
    Series sub(m);
    for (Eigen::Index k = 0; k < m; ++k) sub[k] = detrended[phase + k * period];

    Series smoothed(m + 2);
    smoothed.segment(1, m) = loess_smooth(sub, span);
    const Eigen::Index q = std::min<Eigen::Index>(span, m);
    double before = sub[0];
    double after = sub[m - 1];
    if (m >= 2) {
      if (!loess_estimate(sub, span, -1.0, 0, q - 1, before)) before = sub[0];
      if (!loess_estimate(sub, span, static_cast<double>(m), m - q, m - 1, after)) after = sub[m - 1];
    }
    smoothed[0] = before;
    smoothed[m + 1] = after;
    for (Eigen::Index k = 0; k < m + 2; ++k) extended[phase + k * period] = smoothed[k];
  }
  return extended;
}

}  // namespace

StlDecomposition stl_decompose(const Series& y, const StlConfig& cfg) {
  validate(cfg);
  const Eigen::Index n = y.size();
  if (n < 2 * static_cast<Eigen::Index>(cfg.period))
    throw Error(ErrorKind::Precondition, "series of length " + std::to_string(n) + " too short for STL; need at least " +
                                             std::to_string(2 * cfg.period) + " samples");

  Series trend = Series::Zero(n);
  Series seasonal = Series::Zero(n);
  for (int k = 0; k < cfg.inner_iterations; ++k) {
    const Series detrended = y - trend;
    const Series cycle = cycle_subseries_smooth(detrended, cfg.period, cfg.seasonal_span);
    Series lowpass = moving_average(cycle, cfg.period);
    lowpass = moving_average(lowpass, cfg.period);
    lowpass = moving_average(lowpass, 3);
    lowpass = loess_smooth(lowpass, cfg.lowpass_span);
    seasonal = cycle.segment(cfg.period, n) - lowpass;
    trend = loess_smooth(y - seasonal, cfg.trend_span);
  }

  // Snap trend and seasonal to a power-of-two grid that y[v] lies on and that is fine enough
  // for every sum to be exact, so (trend + seasonal) + residual reproduces y bitwise. The
  // shift is below 2^-52 of the largest component. Skipped when y[v] is off that grid.
  for (Eigen::Index v = 0; v < n; ++v) {
    const double m = std::max({std::abs(trend[v]), std::abs(seasonal[v]), std::abs(y[v]),
                               std::abs(y[v] - (trend[v] + seasonal[v]))});
    if (!(m > 0.0) || !std::isfinite(m)) continue;
    int e = 0;
    std::frexp(m, &e);
    const double q = std::ldexp(1.0, e - 52);
    if (q == 0.0 || std::fmod(y[v], q) != 0.0) continue;
    trend[v] = std::nearbyint(trend[v] / q) * q;
    seasonal[v] = std::nearbyint(seasonal[v] / q) * q;
  }

  StlDecomposition out;
  out.y = y;
  out.trend = std::move(trend);
  out.seasonal = std::move(seasonal);
  out.residual = y - (out.trend + out.seasonal);
  return out;
}

Series relative_timestamps(const Trajectory& traj) {
  Series ts(static_cast<Eigen::Index>(traj.points.size()));
  for (std::size_t i = 0; i < traj.points.size(); ++i)
    ts[static_cast<Eigen::Index>(i)] = traj.points[i].ts - traj.points.front().ts;
  return ts;
}

Trajectory inject_period(const Trajectory& traj, const StlConfig& cfg, const InjectionConfig& inj) {
  if (!(inj.weight >= 0.0) || !std::isfinite(inj.weight))
    throw Error(ErrorKind::Config, "injection weight must be finite and non-negative");
  if (inj.weight == 0.0 || traj.points.size() < 2 * static_cast<std::size_t>(cfg.period)) return traj;
  // Decomposing times relative to the first point keeps loess in a well-conditioned
  // range; the seasonal component is invariant to that shift.
  const StlDecomposition dec = stl_decompose(relative_timestamps(traj), cfg);
  Trajectory out = traj;
  for (std::size_t i = 0; i < out.points.size(); ++i)
    out.points[i].ts += inj.weight * dec.seasonal[static_cast<Eigen::Index>(i)];
  return out;
}

}  // namespace trajmode
