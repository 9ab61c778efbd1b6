#pragma once

#include <Eigen/Core>

#include "trajmode/trajectory.hpp"

namespace trajmode {

using Series = Eigen::VectorXd;

struct StlConfig {
  int period = 24;  // samples per cycle
  int inner_iterations = 2;
  int seasonal_span = 7;
  int trend_span = 47;
  int lowpass_span = 25;

  /// Seasonal span 7, trend span the smallest odd >= 1.5 p / (1 - 1.5 / 7),
  /// low-pass span the smallest odd >= p.
  static StlConfig for_period(int period);

  friend bool operator==(const StlConfig&, const StlConfig&) = default;
};

void validate(const StlConfig& cfg);

struct InjectionConfig {
  double weight = 1.0;
};

struct StlDecomposition {
  Series y;
  Series trend;
  Series seasonal;
  Series residual;  // y - (trend + seasonal)
};

/// Locally weighted linear regression over the `span` nearest samples with
/// tricube weights, evaluated at every index. Series shorter than 2 are
/// returned unchanged; spans longer than the series use the whole series.
Series loess_smooth(const Series& series, int span);

/// Same estimator evaluated at an arbitrary (possibly out-of-range) position
/// using the samples [left, right]. Returns false when all weights vanish.
bool loess_estimate(const Series& series, int span, double position, Eigen::Index left, Eigen::Index right,
                    double& estimate);

/// Trailing moving average; output length is size - window + 1.
Series moving_average(const Series& series, int window);

/// STL inner loop without robustness weights. Requires size >= 2 * period.
StlDecomposition stl_decompose(const Series& y, const StlConfig& cfg);

/// Adds weight x seasonal(ts) to each timestamp. Trajectories shorter than
/// 2 * period are returned unchanged. The result's timestamps need not be monotone.
Trajectory inject_period(const Trajectory& traj, const StlConfig& cfg, const InjectionConfig& inj);

/// Timestamps of a trajectory relative to its first point.
Series relative_timestamps(const Trajectory& traj);

}  // namespace trajmode
