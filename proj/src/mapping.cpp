#include "trajmode/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include "trajmode/error.hpp"
#include "trajmode/geo.hpp"

namespace trajmode {

void validate(const GridConfig& grid) {
  if (grid.cells_x < 1 || grid.cells_y < 1) throw Error(ErrorKind::Config, "grid cell counts must be >= 1");
}

TrajectoryImage::TrajectoryImage(GridConfig grid) : grid_(grid) {
  validate(grid_);
  const auto cells = static_cast<std::size_t>(grid_.cells_x) * static_cast<std::size_t>(grid_.cells_y);
  values_.assign(cells * kImageChannels, 0.0);
  counts_.assign(cells, 0);
}

BoundingBox bounding_box(const Trajectory& traj) {
  if (traj.points.empty()) throw Error(ErrorKind::Precondition, "bounding box of an empty trajectory");
  BoundingBox box{traj.points[0].lon, traj.points[0].lat, traj.points[0].lon, traj.points[0].lat};
  for (const auto& p : traj.points) {
    box.min_lon = std::min(box.min_lon, p.lon);
    box.max_lon = std::max(box.max_lon, p.lon);
    box.min_lat = std::min(box.min_lat, p.lat);
    box.max_lat = std::max(box.max_lat, p.lat);
  }
  return box;
}

namespace {

int axis_index(double v, double lo, double hi, int cells) {
  const double extent = hi - lo;
  if (!(extent > 0.0)) return 0;
  const double cell = extent / cells;
  const auto idx = static_cast<long>(std::floor((v - lo) / cell));
  return static_cast<int>(std::clamp<long>(idx, 0, cells - 1));
}

}  // namespace

CellIndex cell_index(const GpsPoint& p, const BoundingBox& box, const GridConfig& grid) {
  if (!box.contains(p.lat, p.lon)) throw Error(ErrorKind::Precondition, "point outside bounding box");
  return CellIndex{axis_index(p.lon, box.min_lon, box.max_lon, grid.cells_x),
                   axis_index(p.lat, box.min_lat, box.max_lat, grid.cells_y)};
}

double bearing(const GpsPoint& a, const GpsPoint& b) { return geo::initial_bearing_deg(a.lat, a.lon, b.lat, b.lon); }

TrajectoryImage build_image(const Trajectory& traj, const GridConfig& grid) {
  const BoundingBox box = bounding_box(traj);
  TrajectoryImage image(grid);

  // Keyed by (x, y) so the final pass is independent of visiting order.
  std::map<std::pair<int, int>, CellAccumulator> cells;
  const auto& pts = traj.points;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const CellIndex c = cell_index(pts[i], box, grid);
    CellAccumulator& acc = cells[{c.x, c.y}];
    if (acc.n == 0) acc.start = pts[i];
    acc.end = pts[i];
    ++acc.n;
    if (i + 1 < pts.size()) acc.distance_m += geo::haversine_m(pts[i].lat, pts[i].lon, pts[i + 1].lat, pts[i + 1].lon);
  }

  for (const auto& [xy, acc] : cells) {
    const auto [x, y] = xy;
    const double stay = acc.end.ts - acc.start.ts;
    image.count(x, y) = acc.n;
    image.at(x, y, kAzimuth) = bearing(acc.start, acc.end);
    image.at(x, y, kSpeed) = stay > 0.0 ? acc.distance_m / stay : 0.0;
    image.at(x, y, kStayTime) = stay;
  }
  return image;
}

NormalizedImages normalize_channels(const std::vector<TrajectoryImage>& images,
                                    const std::optional<ChannelStats>& stats) {
  NormalizedImages out;
  if (stats) {
    out.stats = *stats;
  } else {
    if (images.empty()) throw Error(ErrorKind::Precondition, "cannot compute channel stats of no images");
    for (int c = 0; c < kImageChannels; ++c) {
      out.stats.min[c] = images.front().values()[c];
      out.stats.max[c] = images.front().values()[c];
    }
    for (const auto& img : images) {
      const auto& v = img.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto c = i % kImageChannels;
        out.stats.min[c] = std::min(out.stats.min[c], v[i]);
        out.stats.max[c] = std::max(out.stats.max[c], v[i]);
      }
    }
  }

  out.images = images;
  for (auto& img : out.images) {
    auto& v = img.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto c = i % kImageChannels;
      const double range = out.stats.max[c] - out.stats.min[c];
      v[i] = range > 0.0 ? std::clamp((v[i] - out.stats.min[c]) / range, 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const TrajectoryImage& normalized) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  const GridConfig& g = normalized.grid();
  out << "P6\n" << g.cells_x << ' ' << g.cells_y << "\n255\n";
  for (int y = g.cells_y - 1; y >= 0; --y) {
    for (int x = 0; x < g.cells_x; ++x) {
      for (int c = 0; c < kImageChannels; ++c) {
        const double v = std::clamp(normalized.at(x, y, c), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

}  // namespace trajmode
