#include "trajmode/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace trajmode::geo {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  const double phi1 = lat1 * kDegToRad;
  const double phi2 = lat2 * kDegToRad;
  const double dphi = (lat2 - lat1) * kDegToRad;
  const double dlambda = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double a = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  a = std::min(1.0, std::max(0.0, a));
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(a));
}

double initial_bearing_deg(double lat1, double lon1, double lat2, double lon2) {
  if (lat1 == lat2 && lon1 == lon2) return 0.0;
  const double phi1 = lat1 * kDegToRad;
  const double phi2 = lat2 * kDegToRad;
  const double dlambda = (lon2 - lon1) * kDegToRad;
  const double y = std::sin(dlambda) * std::cos(phi2);
  const double x = std::cos(phi1) * std::sin(phi2) - std::sin(phi1) * std::cos(phi2) * std::cos(dlambda);
  double deg = std::atan2(y, x) / kDegToRad;
  deg = std::fmod(deg + 360.0, 360.0);
  // fmod can return exactly 360 after rounding of tiny negatives.
  if (deg >= 360.0) deg = 0.0;
  return deg;
}

}  // namespace trajmode::geo
