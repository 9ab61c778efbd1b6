#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "trajmode/mapping.hpp"
#include "trajmode/metrics.hpp"
#include "trajmode/stl.hpp"
#include "trajmode/trajectory.hpp"

namespace trajmode::testing {

/// Per-cell rescan of the whole trajectory for every cell.
TrajectoryImage brute_force_image(const Trajectory& traj, const GridConfig& grid);

/// Bearing through 3-D unit vectors: atan2((a x b) . east-ish, ...), degrees [0, 360).
double vector_bearing_deg(double lat1, double lon1, double lat2, double lon2);

/// Great-circle distance by the spherical law of cosines in long double.
double cosine_law_distance_m(double lat1, double lon1, double lat2, double lon2);

/// Greedy stay-point segmentation written as an explicit two-index scan.
std::vector<std::vector<std::size_t>> brute_force_stay_segments(const Trajectory& traj, double dist_m, double time_s);

/// Local-linear weighted least squares solved by 2x2 normal equations at index i.
double wls_loess_at(const Series& y, int span, Eigen::Index i);

/// Non-zero winding number test (no boundary handling).
bool winding_contains(const std::vector<std::array<double, 2>>& polygon, double lat, double lon);

struct BruteMetrics {
  double acc, precision, recall, f1;
};

/// One-vs-rest metrics for class c straight from (true, pred) pairs.
BruteMetrics brute_force_binary(const std::vector<int>& truth, const std::vector<int>& pred, int c);

/// Pearson correlation.
double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace trajmode::testing
