#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "trajmode/trajectory.hpp"

namespace trajmode {

struct GridConfig {
  int cells_x = 40;  // w, along longitude
  int cells_y = 40;  // h, along latitude

  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

void validate(const GridConfig& grid);

struct BoundingBox {
  double min_lon = 0.0;
  double min_lat = 0.0;
  double max_lon = 0.0;
  double max_lat = 0.0;

  bool contains(double lat, double lon) const {
    return lat >= min_lat && lat <= max_lat && lon >= min_lon && lon <= max_lon;
  }
};

struct CellIndex {
  int x = 0;
  int y = 0;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Per-cell state accumulated in one pass over the trajectory.
struct CellAccumulator {
  std::uint32_t n = 0;
  GpsPoint start;        // first point seen in the cell
  GpsPoint end;          // last point seen in the cell
  double distance_m = 0.0;
};

enum Channel : int { kAzimuth = 0, kSpeed = 1, kStayTime = 2 };
inline constexpr int kImageChannels = 3;

/// cells_x x cells_y x 3 raster. Raw values are physical units: azimuth in
/// degrees [0, 360), speed in m/s, stay time in seconds.
class TrajectoryImage {
 public:
  TrajectoryImage() = default;
  explicit TrajectoryImage(GridConfig grid);

  const GridConfig& grid() const { return grid_; }

  double& at(int x, int y, int c) { return values_[offset(x, y, c)]; }
  double at(int x, int y, int c) const { return values_[offset(x, y, c)]; }

  /// Number of trajectory points that fell in a cell (0 = untouched).
  std::uint32_t& count(int x, int y) { return counts_[offset(x, y, 0) / kImageChannels]; }
  std::uint32_t count(int x, int y) const { return counts_[offset(x, y, 0) / kImageChannels]; }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  friend bool operator==(const TrajectoryImage&, const TrajectoryImage&) = default;

 private:
  std::size_t offset(int x, int y, int c) const {
    return (static_cast<std::size_t>(x) * static_cast<std::size_t>(grid_.cells_y) + static_cast<std::size_t>(y)) *
               kImageChannels +
           static_cast<std::size_t>(c);
  }

  GridConfig grid_{};
  std::vector<double> values_;
  std::vector<std::uint32_t> counts_;
};

BoundingBox bounding_box(const Trajectory& traj);

/// floor((coord - min) / cell_size), clamped to the grid; zero-extent axes map to 0.
CellIndex cell_index(const GpsPoint& p, const BoundingBox& box, const GridConfig& grid);

double bearing(const GpsPoint& a, const GpsPoint& b);

TrajectoryImage build_image(const Trajectory& traj, const GridConfig& grid);

struct ChannelStats {
  std::array<double, kImageChannels> min{};
  std::array<double, kImageChannels> max{};

  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

struct NormalizedImages {
  std::vector<TrajectoryImage> images;
  ChannelStats stats;
};

/// Per-channel min-max scaling to [0, 1]. Stats are computed from `images` when
/// absent; supplied stats are reused and out-of-range values clipped.
NormalizedImages normalize_channels(const std::vector<TrajectoryImage>& images,
                                    const std::optional<ChannelStats>& stats = std::nullopt);

/// Binary PPM (P6) of a normalized image, values x255 rounded. North is up.
void write_ppm(const std::filesystem::path& path, const TrajectoryImage& normalized);

}  // namespace trajmode
