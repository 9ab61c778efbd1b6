#pragma once

namespace trajmode::geo {

inline constexpr double kEarthRadiusM = 6371000.0;

// Great-circle distance in meters between two (lat, lon) positions in degrees.
double haversine_m(double lat1, double lon1, double lat2, double lon2);

// Initial great-circle bearing in degrees, clockwise from north, in [0, 360).
// Coincident positions give 0.
double initial_bearing_deg(double lat1, double lon1, double lat2, double lon2);

}  // namespace trajmode::geo
